//! Weak-perspective camera model and the closed-form orthographic-N-point
//! (OnP) solver.
//!
//! Every solver step is expressed as tape operations so the trainer can
//! differentiate through it; the plain-matrix functions build a throwaway
//! tape and read the values back.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{AutodiffError, GeometryError};
use crate::linalg::{cross3, norm3};
use crate::matrix::Matrix;

/// Minimum number of visible keypoints for the OnP problem to be determined.
pub const MIN_VISIBLE: usize = 3;

/// Per-keypoint visibility; realizes the diagonal binary mask `M`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Visibility(Vec<bool>);

impl Visibility {
    pub fn full(p: usize) -> Self {
        Self(alloc::vec![true; p])
    }

    pub fn new(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn is_visible(&self, j: usize) -> bool {
        self.0[j]
    }

    pub fn visible_count(&self) -> usize {
        self.0.iter().filter(|v| **v).count()
    }

    pub fn is_full(&self) -> bool {
        self.0.iter().all(|v| *v)
    }

    pub fn visible_indices(&self) -> Vec<usize> {
        (0..self.0.len()).filter(|&j| self.0[j]).collect()
    }

    /// `M` as a P×P diagonal matrix.
    pub fn diag(&self) -> Matrix {
        Matrix::diag(&self.0.iter().map(|v| if *v { 1.0 } else { 0.0 }).collect::<Vec<_>>())
    }

    /// `I − M` as a P×P diagonal matrix.
    pub fn complement_diag(&self) -> Matrix {
        Matrix::diag(&self.0.iter().map(|v| if *v { 0.0 } else { 1.0 }).collect::<Vec<_>>())
    }

    /// `K` such that `S·K` is the adaptive normalization of `S` under `scheme`.
    pub fn adaptive_operator(&self, scheme: AdaptiveScheme) -> Matrix {
        let p = self.0.len();
        let weight = scheme.occluded_weight(self);
        Matrix::from_fn(p, p, |r, c| {
            let occluded = if self.0[r] { 0.0 } else { weight };
            let id = if r == c { 1.0 } else { 0.0 };
            id + occluded
        })
    }
}

/// How occluded columns are folded into every column of a shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdaptiveScheme {
    /// `S + S·(I − M)·1·1ᵀ`.
    #[default]
    Literal,
    /// `S + S·(I − M)·1·1ᵀ / (1ᵀ·M·1)`. For a centered `S` this moves the
    /// visible centroid to the origin, matching the centering of `W̃`.
    VisibleMean,
}

impl AdaptiveScheme {
    fn occluded_weight(self, mask: &Visibility) -> f64 {
        match self {
            AdaptiveScheme::Literal => 1.0,
            AdaptiveScheme::VisibleMean => 1.0 / mask.visible_count().max(1) as f64,
        }
    }
}

/// One frame's 2D keypoints `W` (2×P) and visibility.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationFrame {
    pub keypoints: Matrix,
    pub visibility: Visibility,
    /// Zero-based position of the frame in its dataset.
    pub frame_id: usize,
}

impl ObservationFrame {
    pub fn new(keypoints: Matrix, visibility: Visibility, frame_id: usize) -> Self {
        Self {
            keypoints,
            visibility,
            frame_id,
        }
    }

    pub fn points(&self) -> usize {
        self.keypoints.cols()
    }
}

/// Keypoints centered on the visible centroid and scaled to unit RMS radius.
/// Occluded columns are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedFrame {
    pub keypoints: Matrix,
    pub visibility: Visibility,
    pub scale: f64,
    pub centroid: [f64; 2],
    pub frame_id: usize,
}

impl NormalizedFrame {
    pub fn points(&self) -> usize {
        self.keypoints.cols()
    }

    /// Maps normalized image coordinates back to the original units.
    pub fn denormalize_xy(&self, xy: &Matrix) -> Matrix {
        Matrix::from_fn(xy.rows(), xy.cols(), |r, c| xy[(r, c)] * self.scale + self.centroid[r])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameKind {
    Camera,
    Canonical,
}

/// A 3×P point set tagged with the frame it is expressed in.
#[derive(Debug, Clone, PartialEq)]
pub struct Shape3D {
    pub points: Matrix,
    pub kind: FrameKind,
}

impl Shape3D {
    pub fn camera(points: Matrix) -> Self {
        Self {
            points,
            kind: FrameKind::Camera,
        }
    }

    pub fn canonical(points: Matrix) -> Self {
        Self {
            points,
            kind: FrameKind::Canonical,
        }
    }
}

/// An element of SO(3). Rows are `r_x`, `r_y`, `r_z`; the first two rows form
/// the weak-perspective `R_xy`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rotation(Matrix);

impl Rotation {
    pub fn identity() -> Self {
        Self(Matrix::identity(3))
    }

    /// Wraps a 3×3 matrix, checking orthogonality and determinant to `tol`.
    pub fn from_matrix(m: Matrix, tol: f64) -> Option<Self> {
        if m.shape() != (3, 3) {
            return None;
        }
        let rrt = m.matmul(&m.transpose()).ok()?;
        if rrt.max_abs_diff(&Matrix::identity(3)) > tol || libm::fabs(det3(&m) - 1.0) > tol {
            return None;
        }
        Some(Self(m))
    }

    pub(crate) fn from_matrix_unchecked(m: Matrix) -> Self {
        Self(m)
    }

    /// Rotation of the unit quaternion `(w, x, y, z)`; the input is normalized.
    pub fn from_quaternion(q: [f64; 4]) -> Self {
        let n = libm::sqrt(q.iter().map(|v| v * v).sum());
        let [w, x, y, z] = [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
        Self(Matrix::from_rows(&[
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ]))
    }

    /// Rotation by `angle` radians about `axis`.
    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Self {
        let n = norm3(&axis);
        let (s, c) = libm::sincos(angle / 2.0);
        Self::from_quaternion([c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n])
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn rxy(&self) -> Matrix {
        Matrix::from_vec(2, 3, self.0.as_slice()[..6].to_vec()).expect("2x3")
    }

    pub fn rz(&self) -> [f64; 3] {
        let r = self.0.row(2);
        [r[0], r[1], r[2]]
    }

    pub fn compose(&self, other: &Rotation) -> Rotation {
        Rotation(self.0.matmul(&other.0).expect("3x3"))
    }

    pub fn transpose(&self) -> Rotation {
        Rotation(self.0.transpose())
    }

    /// Angle of `selfᵀ·other`, computed from the chordal distance so it stays
    /// accurate for tiny angles.
    pub fn geodesic_distance(&self, other: &Rotation) -> f64 {
        let chord = self.0.zip_map(&other.0, |a, b| a - b).expect("3x3").frobenius();
        2.0 * libm::asin((chord / (2.0 * core::f64::consts::SQRT_2)).min(1.0))
    }

    /// Unit quaternion `(w, x, y, z)` with `w ≥ 0`.
    pub fn to_quaternion(&self) -> [f64; 4] {
        let m = &self.0;
        let tr = m.trace();
        let q = if tr > 0.0 {
            let s = libm::sqrt(tr + 1.0) * 2.0;
            [
                0.25 * s,
                (m[(2, 1)] - m[(1, 2)]) / s,
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(1, 0)] - m[(0, 1)]) / s,
            ]
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = libm::sqrt(1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]) * 2.0;
            [
                (m[(2, 1)] - m[(1, 2)]) / s,
                0.25 * s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
            ]
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = libm::sqrt(1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]) * 2.0;
            [
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                0.25 * s,
                (m[(1, 2)] + m[(2, 1)]) / s,
            ]
        } else {
            let s = libm::sqrt(1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]) * 2.0;
            [
                (m[(1, 0)] - m[(0, 1)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
                (m[(1, 2)] + m[(2, 1)]) / s,
                0.25 * s,
            ]
        };
        if q[0] < 0.0 {
            [-q[0], -q[1], -q[2], -q[3]]
        } else {
            q
        }
    }

    /// Geodesic interpolation from `self` (t = 0) to `other` (t = 1).
    pub fn slerp(&self, other: &Rotation, t: f64) -> Rotation {
        let a = self.to_quaternion();
        let mut b = other.to_quaternion();
        let mut dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        if dot < 0.0 {
            b = [-b[0], -b[1], -b[2], -b[3]];
            dot = -dot;
        }
        let q = if dot > 0.9995 {
            core::array::from_fn(|i| a[i] + t * (b[i] - a[i]))
        } else {
            let theta = libm::acos(dot.min(1.0));
            let s = libm::sin(theta);
            let wa = libm::sin((1.0 - t) * theta) / s;
            let wb = libm::sin(t * theta) / s;
            core::array::from_fn(|i| wa * a[i] + wb * b[i])
        };
        Rotation::from_quaternion(q)
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        Rotation::from_matrix(self.0.clone(), tol).is_some()
    }
}

pub fn det3(m: &Matrix) -> f64 {
    m[(0, 0)] * (m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(2, 1)])
        - m[(0, 1)] * (m[(1, 0)] * m[(2, 2)] - m[(1, 2)] * m[(2, 0)])
        + m[(0, 2)] * (m[(1, 0)] * m[(2, 1)] - m[(1, 1)] * m[(2, 0)])
}

/// `s·R_xy·S + t_xy`.
pub fn project_weak_perspective(shape: &Shape3D, rot: &Rotation, scale: f64, trans: [f64; 2]) -> Matrix {
    let proj = rot.rxy().matmul(&shape.points).expect("3xP shape");
    Matrix::from_fn(2, proj.cols(), |r, c| scale * proj[(r, c)] + trans[r])
}

/// Centers the visible keypoints and scales them to unit RMS radius.
pub fn normalize_frame(frame: &ObservationFrame) -> Result<NormalizedFrame, GeometryError> {
    let w = &frame.keypoints;
    let vis = &frame.visibility;
    let id = frame.frame_id;
    let visible = vis.visible_indices();
    if visible.len() < MIN_VISIBLE {
        return Err(GeometryError::TooFewVisible {
            frame: id,
            visible: visible.len(),
        });
    }
    let n = visible.len() as f64;
    let cx = visible.iter().map(|&j| w[(0, j)]).sum::<f64>() / n;
    let cy = visible.iter().map(|&j| w[(1, j)]).sum::<f64>() / n;
    let ms = visible
        .iter()
        .map(|&j| {
            let dx = w[(0, j)] - cx;
            let dy = w[(1, j)] - cy;
            dx * dx + dy * dy
        })
        .sum::<f64>()
        / n;
    let scale = libm::sqrt(ms);
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(GeometryError::ZeroSpread { frame: id });
    }
    let keypoints = Matrix::from_fn(2, w.cols(), |r, c| {
        if vis.is_visible(c) {
            (w[(r, c)] - if r == 0 { cx } else { cy }) / scale
        } else {
            0.0
        }
    });
    Ok(NormalizedFrame {
        keypoints,
        visibility: vis.clone(),
        scale,
        centroid: [cx, cy],
        frame_id: id,
    })
}

/// `S + S·(I − M)·1·1ᵀ`: every column gains the sum of the occluded columns
/// (divided by the visible count under [`AdaptiveScheme::VisibleMean`]).
pub fn adaptive_normalize(shape: &Matrix, mask: &Visibility, scheme: AdaptiveScheme) -> Matrix {
    let weight = scheme.occluded_weight(mask);
    let mut occluded_sum = [0.0; 3];
    for j in 0..shape.cols() {
        if !mask.is_visible(j) {
            for (r, acc) in occluded_sum.iter_mut().enumerate().take(shape.rows()) {
                *acc += shape[(r, j)];
            }
        }
    }
    Matrix::from_fn(shape.rows(), shape.cols(), |r, c| {
        shape[(r, c)] + weight * occluded_sum[r]
    })
}

/// Tape version of [`adaptive_normalize`].
pub fn adaptive_normalize_node(
    t: &mut Tape,
    shape: Var,
    mask: &Visibility,
    scheme: AdaptiveScheme,
) -> Result<Var, AutodiffError> {
    let k = t.constant(mask.adaptive_operator(scheme));
    t.matmul(shape, k)
}

fn check_not_collinear(frame: &NormalizedFrame) -> Result<(), GeometryError> {
    let w = &frame.keypoints;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for j in frame.visibility.visible_indices() {
        sxx += w[(0, j)] * w[(0, j)];
        sxy += w[(0, j)] * w[(1, j)];
        syy += w[(1, j)] * w[(1, j)];
    }
    let tr = sxx + syy;
    if sxx * syy - sxy * sxy <= 1e-12 * tr * tr {
        return Err(GeometryError::Collinear { frame: frame.frame_id });
    }
    Ok(())
}

/// Graph form of the rotation fit for any number of canonical 3×P targets
/// (already adaptively normalized when the frame has occlusions):
///
/// `R̃ = (Σ W̃·T_vᵀ)·(Σ T_v·T_vᵀ + ridge)⁻¹`, projected onto orthonormal rows by
/// SVD and completed with `r_z = r_x × r_y`.
pub fn fit_rotation_node(t: &mut Tape, targets: &[Var], frame: &NormalizedFrame) -> Result<Var, GeometryError> {
    check_not_collinear(frame)?;
    let id = frame.frame_id;
    let g = |e: AutodiffError| GeometryError::from_autodiff(id, e);
    let w = t.constant(frame.keypoints.clone());
    let mask = if frame.visibility.is_full() {
        None
    } else {
        Some(t.constant(frame.visibility.diag()))
    };
    let mut normal: Option<Var> = None;
    let mut total: Option<Var> = None;
    for &target in targets {
        let visible = match mask {
            Some(m) => t.matmul(target, m).map_err(g)?,
            None => target,
        };
        let vt = t.transpose(visible);
        let nn = t.matmul(visible, vt).map_err(g)?;
        normal = Some(match normal {
            None => nn,
            Some(acc) => t.add(acc, nn).map_err(g)?,
        });
        total = Some(match total {
            None => target,
            Some(acc) => t.add(acc, target).map_err(g)?,
        });
    }
    let (normal, total) = match (normal, total) {
        (Some(n), Some(s)) => (n, s),
        _ => {
            return Err(GeometryError::DegenerateNormal {
                frame: id,
                condition: f64::INFINITY,
            })
        }
    };
    // Occluded columns of W̃ are zero, so W̃·Σᵀ only sees visible columns.
    let total_t = t.transpose(total);
    let cross = t.matmul(w, total_t).map_err(g)?;
    let ridged = t.ridge(normal).map_err(g)?;
    let inv = t.inverse3(ridged).map_err(g)?;
    let r_ls = t.matmul(cross, inv).map_err(g)?;
    let (u, _, v) = t.svd_small(r_ls).map_err(g)?;
    let vt = t.transpose(v);
    let rxy = t.matmul(u, vt).map_err(g)?;
    t.complete_rotation(rxy).map_err(g)
}

/// `z* = ½·(Aᵀ + Bᵀ)·r_z` as a 1×P row.
pub fn fit_depth_node(t: &mut Tape, a: Var, b: Var, rot: Var) -> Result<Var, AutodiffError> {
    let rz = t.view(rot, 6, 1, 3)?;
    let sum = t.add(a, b)?;
    let z = t.matmul(rz, sum)?;
    Ok(t.scale(z, 0.5))
}

/// Tape nodes produced by the lower-level solve for one frame.
#[derive(Debug, Clone, Copy)]
pub struct SolveNodes {
    /// 3×3 rotation `R*`.
    pub rotation: Var,
    /// 1×P depth row `z*`.
    pub depth: Var,
    /// Camera-frame target `S̃_cam`: `[W̃; z*ᵀ]` on visible columns, the
    /// per-column closed form (or the free variable) on occluded ones.
    pub camera: Var,
    /// First target after adaptive normalization.
    pub a: Var,
    /// Second target after adaptive normalization.
    pub b: Var,
}

/// How occluded columns of the camera-frame target are filled.
#[derive(Debug, Clone, Copy)]
pub enum OccludedFill {
    /// `R·½(Ã + B̃)` column by column.
    ClosedForm,
    /// A caller-provided 3×P node.
    Free(Var),
}

/// Lower-level OnP solve on the tape. Frames with full visibility use the
/// plain formulas; otherwise targets are adaptively normalized and the
/// camera-frame target is fused from observations and `fill`.
pub fn solve_node(
    t: &mut Tape,
    a: Var,
    b: Var,
    frame: &NormalizedFrame,
    fill: OccludedFill,
    scheme: AdaptiveScheme,
) -> Result<SolveNodes, GeometryError> {
    if frame.visibility.is_full() {
        solve_full(t, a, b, frame)
    } else {
        solve_occluded(t, a, b, frame, fill, scheme)
    }
}

fn solve_full(t: &mut Tape, a: Var, b: Var, frame: &NormalizedFrame) -> Result<SolveNodes, GeometryError> {
    let id = frame.frame_id;
    let g = |e: AutodiffError| GeometryError::from_autodiff(id, e);
    let rotation = fit_rotation_node(t, &[a, b], frame)?;
    let depth = fit_depth_node(t, a, b, rotation).map_err(g)?;
    let w = t.constant(frame.keypoints.clone());
    let camera = t.vstack(w, depth).map_err(g)?;
    Ok(SolveNodes {
        rotation,
        depth,
        camera,
        a,
        b,
    })
}

/// The occlusion-aware solve. With a full mask it evaluates to exactly the
/// same values as the plain path.
pub fn solve_occluded(
    t: &mut Tape,
    a: Var,
    b: Var,
    frame: &NormalizedFrame,
    fill: OccludedFill,
    scheme: AdaptiveScheme,
) -> Result<SolveNodes, GeometryError> {
    let id = frame.frame_id;
    let g = |e: AutodiffError| GeometryError::from_autodiff(id, e);
    let mask = &frame.visibility;
    let an = adaptive_normalize_node(t, a, mask, scheme).map_err(g)?;
    let bn = adaptive_normalize_node(t, b, mask, scheme).map_err(g)?;
    let rotation = fit_rotation_node(t, &[an, bn], frame)?;
    let depth = fit_depth_node(t, an, bn, rotation).map_err(g)?;

    let m = t.constant(mask.diag());
    let not_m = t.constant(mask.complement_diag());
    let free = match fill {
        OccludedFill::ClosedForm => {
            let sum = t.add(an, bn).map_err(g)?;
            let half = t.scale(sum, 0.5);
            t.matmul(rotation, half).map_err(g)?
        }
        OccludedFill::Free(v) => v,
    };
    let occluded_part = t.matmul(free, not_m).map_err(g)?;
    let w = t.constant(frame.keypoints.clone());
    let observed = t.vstack(w, depth).map_err(g)?;
    let visible_part = t.matmul(observed, m).map_err(g)?;
    let camera = t.add(occluded_part, visible_part).map_err(g)?;
    Ok(SolveNodes {
        rotation,
        depth,
        camera,
        a: an,
        b: bn,
    })
}

/// Plain-matrix rotation fit; `targets` are canonical 3×P shapes that are
/// adaptively normalized here when the frame has occlusions.
pub fn onp_fit_rotation(
    targets: &[&Matrix],
    frame: &NormalizedFrame,
    scheme: AdaptiveScheme,
) -> Result<Rotation, GeometryError> {
    let mut t = Tape::new();
    let mut vars = Vec::with_capacity(targets.len());
    for m in targets {
        let v = t.constant((*m).clone());
        let v = if frame.visibility.is_full() {
            v
        } else {
            adaptive_normalize_node(&mut t, v, &frame.visibility, scheme)
                .map_err(|e| GeometryError::from_autodiff(frame.frame_id, e))?
        };
        vars.push(v);
    }
    let r = fit_rotation_node(&mut t, &vars, frame)?;
    Ok(Rotation::from_matrix_unchecked(t.value(r).clone()))
}

/// `z* = ½·(aᵀ·r_z + bᵀ·r_z)`.
pub fn onp_fit_depth(a: &Matrix, b: &Matrix, rot: &Rotation) -> Vec<f64> {
    let rz = rot.rz();
    (0..a.cols())
        .map(|j| {
            let za = rz[0] * a[(0, j)] + rz[1] * a[(1, j)] + rz[2] * a[(2, j)];
            let zb = rz[0] * b[(0, j)] + rz[1] * b[(1, j)] + rz[2] * b[(2, j)];
            0.5 * (za + zb)
        })
        .collect()
}

/// Aligns a canonical shape to a normalized frame: single-target rotation fit
/// followed by `S_cam = R·S̃`.
pub fn onp_align_inference(
    shape: &Shape3D,
    frame: &NormalizedFrame,
    scheme: AdaptiveScheme,
) -> Result<(Rotation, Shape3D), GeometryError> {
    let rot = onp_fit_rotation(&[&shape.points], frame, scheme)?;
    let s = if frame.visibility.is_full() {
        shape.points.clone()
    } else {
        adaptive_normalize(&shape.points, &frame.visibility, scheme)
    };
    let cam = rot.matrix().matmul(&s).expect("3xP");
    Ok((rot, Shape3D::camera(cam)))
}

/// `S̃_cam = S̃'_cam·(I − M) + [W̃; z]·M`.
pub fn fuse_occluded(shape_free: &Matrix, w: &Matrix, z: &[f64], mask: &Visibility) -> Shape3D {
    let p = w.cols();
    let points = Matrix::from_fn(3, p, |r, c| {
        if mask.is_visible(c) {
            if r < 2 {
                w[(r, c)]
            } else {
                z[c]
            }
        } else {
            shape_free[(r, c)]
        }
    });
    Shape3D::camera(points)
}

/// Closed-form fill of occluded columns: `R·½(Ã + B̃)`.
pub fn occluded_closed_form(
    a: &Matrix,
    b: &Matrix,
    rot: &Rotation,
    mask: &Visibility,
    scheme: AdaptiveScheme,
) -> Matrix {
    let an = adaptive_normalize(a, mask, scheme);
    let bn = adaptive_normalize(b, mask, scheme);
    let half = an.zip_map(&bn, |x, y| 0.5 * (x + y)).expect("3xP");
    rot.matrix().matmul(&half).expect("3xP")
}

/// Plain-matrix version of the full lower-level solve.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSolution {
    pub rotation: Rotation,
    pub depth: Vec<f64>,
    pub camera: Shape3D,
}

pub fn solve_frame(
    a: &Matrix,
    b: &Matrix,
    frame: &NormalizedFrame,
    scheme: AdaptiveScheme,
) -> Result<FrameSolution, GeometryError> {
    let mut t = Tape::new();
    let av = t.constant(a.clone());
    let bv = t.constant(b.clone());
    let nodes = solve_node(&mut t, av, bv, frame, OccludedFill::ClosedForm, scheme)?;
    Ok(FrameSolution {
        rotation: Rotation::from_matrix_unchecked(t.value(nodes.rotation).clone()),
        depth: t.value(nodes.depth).as_slice().to_vec(),
        camera: Shape3D::camera(t.value(nodes.camera).clone()),
    })
}

/// Reflects the depth row about its mean (`z → 2·mean(z) − z`).
pub fn flip_depth(shape: &Matrix) -> Matrix {
    let p = shape.cols() as f64;
    let mean = shape.row(2).iter().sum::<f64>() / p;
    let mut out = shape.clone();
    for v in out.row_mut(2) {
        *v = 2.0 * mean - *v;
    }
    out
}

pub fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    cross3(&a, &b)
}
