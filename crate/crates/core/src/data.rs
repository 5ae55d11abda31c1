//! Keypoint datasets and the synthetic ground-truth generator.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::geometry::{normalize_frame, NormalizedFrame, ObservationFrame, Rotation, Shape3D, Visibility, MIN_VISIBLE};
use crate::linalg::gram_schmidt;
use crate::matrix::Matrix;
use crate::rng::{normal, normal_matrix, seeded, uniform, Rng};

const OCCLUSION_REDRAWS: usize = 100;

/// Frames sharing one point count, with optional camera-frame ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    frames: Vec<ObservationFrame>,
    points: usize,
    ground_truth: Option<Vec<Shape3D>>,
}

impl Dataset {
    pub fn new(frames: Vec<ObservationFrame>, ground_truth: Option<Vec<Shape3D>>) -> Result<Self, DataError> {
        let first = frames.first().ok_or(DataError::NoFrames)?;
        let points = first.points();
        if points < MIN_VISIBLE {
            return Err(DataError::TooFewPoints(points));
        }
        for (i, f) in frames.iter().enumerate() {
            let got = f.points();
            if got != points || f.visibility.len() != points || f.keypoints.rows() != 2 {
                return Err(DataError::InconsistentPoints {
                    frame: i,
                    expected: points,
                    got: if got != points { got } else { f.visibility.len() },
                });
            }
        }
        if let Some(gt) = &ground_truth {
            if gt.len() != frames.len() {
                return Err(DataError::GroundTruthCount {
                    expected: frames.len(),
                    got: gt.len(),
                });
            }
            for (i, s) in gt.iter().enumerate() {
                if s.points.shape() != (3, points) {
                    return Err(DataError::InconsistentPoints {
                        frame: i,
                        expected: points,
                        got: s.points.cols(),
                    });
                }
            }
        }
        Ok(Self {
            frames,
            points,
            ground_truth,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn frames(&self) -> &[ObservationFrame] {
        &self.frames
    }

    pub fn ground_truth(&self) -> Option<&[Shape3D]> {
        self.ground_truth.as_deref()
    }

    /// The same observations with the ground truth removed.
    pub fn without_ground_truth(&self) -> Dataset {
        Dataset {
            frames: self.frames.clone(),
            points: self.points,
            ground_truth: None,
        }
    }

    /// Normalizes every frame; failures are returned in place.
    pub fn normalized(&self) -> Vec<Result<NormalizedFrame, DataError>> {
        self.frames
            .iter()
            .map(|f| normalize_frame(f).map_err(DataError::from))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CameraMode {
    /// Independent uniform rotations.
    #[default]
    Random,
    /// Geodesic interpolation between random keyframe rotations.
    Smooth,
}

fn default_basis_scale() -> f64 {
    0.5
}

fn default_keyframe_spacing() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SynthSpec {
    pub points: usize,
    pub frames: usize,
    /// Number of deformation bases; 0 gives a rigid object.
    pub true_code_dim: usize,
    /// Norm of each basis relative to the mean shape.
    #[serde(default = "default_basis_scale")]
    pub basis_scale: f64,
    #[serde(default)]
    pub camera_mode: CameraMode,
    #[serde(default)]
    pub occlusion_rate: f64,
    /// Standard deviation relative to the frame's RMS radius.
    #[serde(default)]
    pub noise_sigma: f64,
    /// Frames between keyframe rotations in smooth mode.
    #[serde(default = "default_keyframe_spacing")]
    pub keyframe_spacing: usize,
    #[serde(default)]
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(points: usize, frames: usize, true_code_dim: usize, seed: u64) -> Self {
        Self {
            points,
            frames,
            true_code_dim,
            basis_scale: default_basis_scale(),
            camera_mode: CameraMode::Random,
            occlusion_rate: 0.0,
            noise_sigma: 0.0,
            keyframe_spacing: default_keyframe_spacing(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.frames == 0 {
            return Err(DataError::NoFrames);
        }
        if self.points < MIN_VISIBLE {
            return Err(DataError::TooFewPoints(self.points));
        }
        if 3 * self.points < self.true_code_dim + 2 {
            return Err(DataError::InvalidSpec(format!(
                "{} bases do not fit in 3P={} dimensions",
                self.true_code_dim,
                3 * self.points
            )));
        }
        if !(0.0..1.0).contains(&self.occlusion_rate) {
            return Err(DataError::InvalidSpec(format!(
                "occlusion rate {} outside [0, 1)",
                self.occlusion_rate
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(DataError::InvalidSpec(format!("noise sigma {}", self.noise_sigma)));
        }
        if !(self.basis_scale >= 0.0 && self.basis_scale.is_finite()) {
            return Err(DataError::InvalidSpec(format!("basis scale {}", self.basis_scale)));
        }
        if self.keyframe_spacing == 0 {
            return Err(DataError::InvalidSpec("keyframe spacing must be at least 1".into()));
        }
        Ok(())
    }
}

fn centered(m: &mut Matrix) {
    let p = m.cols() as f64;
    for r in 0..m.rows() {
        let mean = m.row(r).iter().sum::<f64>() / p;
        for v in m.row_mut(r) {
            *v -= mean;
        }
    }
}

/// Uniform rotation from a normalized Gaussian quaternion.
pub fn random_rotation(rng: &mut Rng) -> Rotation {
    loop {
        let q = [normal(rng), normal(rng), normal(rng), normal(rng)];
        let n = libm::sqrt(q.iter().map(|v| v * v).sum::<f64>());
        if n > 1e-8 {
            return Rotation::from_quaternion([q[0] / n, q[1] / n, q[2] / n, q[3] / n]);
        }
    }
}

/// Ground-truth factors behind a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthModel {
    pub mean_shape: Matrix,
    pub bases: Vec<Matrix>,
    /// N×k_true code trajectory.
    pub codes: Matrix,
    pub rotations: Vec<Rotation>,
    /// Canonical-frame shapes.
    pub shapes: Vec<Matrix>,
}

fn mean_and_bases(spec: &SynthSpec, rng: &mut Rng) -> (Matrix, Vec<Matrix>) {
    let p = spec.points;
    let mut s0 = normal_matrix(rng, 3, p, 1.0);
    centered(&mut s0);
    let rms = libm::sqrt(s0.frobenius_sq() / p as f64);
    let s0 = s0.scaled(1.0 / rms);

    let mut candidates = alloc::vec![s0.as_slice().to_vec()];
    let mut bases = Vec::new();
    while bases.len() < spec.true_code_dim {
        let mut b = normal_matrix(rng, 3, p, 1.0);
        centered(&mut b);
        candidates.push(b.into_vec());
        let ortho = gram_schmidt(&candidates);
        if ortho.len() == candidates.len() {
            let v = ortho.last().expect("nonempty").clone();
            let m = Matrix::from_vec(3, p, v).expect("3P vector");
            bases.push(m.scaled(spec.basis_scale * s0.frobenius()));
        }
        candidates = core::iter::once(s0.as_slice().to_vec())
            .chain(bases.iter().map(|b| b.as_slice().to_vec()))
            .collect();
    }
    (s0, bases)
}

fn code_trajectories(spec: &SynthSpec, rng: &mut Rng) -> Matrix {
    let n = spec.frames;
    let mut codes = Matrix::zeros(n, spec.true_code_dim);
    for i in 0..spec.true_code_dim {
        let terms = if uniform(rng, 0.0, 1.0) < 0.5 { 2 } else { 3 };
        let waves: Vec<(f64, f64, f64)> = (0..terms)
            .map(|_| {
                let amp = uniform(rng, 0.5, 1.0) / terms as f64;
                let cycles = uniform(rng, 0.5, 4.0);
                let phase = uniform(rng, 0.0, 2.0 * PI);
                (amp, cycles, phase)
            })
            .collect();
        for t in 0..n {
            let x = t as f64 / n as f64;
            let c: f64 = waves
                .iter()
                .map(|(a, f, ph)| a * libm::sin(2.0 * PI * f * x + ph))
                .sum();
            codes.as_mut_slice()[t * spec.true_code_dim + i] = c;
        }
    }
    codes
}

fn rotations(spec: &SynthSpec, rng: &mut Rng) -> Vec<Rotation> {
    match spec.camera_mode {
        CameraMode::Random => (0..spec.frames).map(|_| random_rotation(rng)).collect(),
        CameraMode::Smooth => {
            let step = spec.keyframe_spacing;
            let keys: Vec<Rotation> = (0..spec.frames / step + 2).map(|_| random_rotation(rng)).collect();
            (0..spec.frames)
                .map(|t| {
                    let k = t / step;
                    let s = (t % step) as f64 / step as f64;
                    keys[k].slerp(&keys[k + 1], s)
                })
                .collect()
        }
    }
}

fn draw_visibility(spec: &SynthSpec, rng: &mut Rng, frame: usize) -> Result<Visibility, DataError> {
    if spec.occlusion_rate == 0.0 {
        return Ok(Visibility::full(spec.points));
    }
    for _ in 0..OCCLUSION_REDRAWS {
        let bits: Vec<bool> = (0..spec.points)
            .map(|_| uniform(rng, 0.0, 1.0) >= spec.occlusion_rate)
            .collect();
        let vis = Visibility::new(bits);
        if vis.visible_count() >= MIN_VISIBLE {
            return Ok(vis);
        }
    }
    Err(DataError::InfeasibleOcclusion { frame })
}

/// Builds a dataset from `spec` together with the factors that produced it.
pub fn generate_synthetic_with_model(spec: &SynthSpec) -> Result<(Dataset, SynthModel), DataError> {
    spec.validate()?;
    let mut rng = seeded(spec.seed);
    let (s0, bases) = mean_and_bases(spec, &mut rng);
    let codes = code_trajectories(spec, &mut rng);
    let rots = rotations(spec, &mut rng);

    let p = spec.points;
    let mut frames = Vec::with_capacity(spec.frames);
    let mut truth = Vec::with_capacity(spec.frames);
    let mut shapes = Vec::with_capacity(spec.frames);
    for (t, rot) in rots.iter().enumerate() {
        let mut s = s0.clone();
        for (i, b) in bases.iter().enumerate() {
            let c = codes.row(t)[i];
            s.add_assign(&b.scaled(c));
        }
        let cam = rot.matrix().matmul(&s).expect("3x3 by 3xP");
        let vis = draw_visibility(spec, &mut rng, t)?;
        let mut w = Matrix::from_fn(2, p, |r, c| if vis.is_visible(c) { cam[(r, c)] } else { 0.0 });
        if spec.noise_sigma > 0.0 {
            let radius = libm::sqrt(
                (0..p)
                    .map(|j| cam[(0, j)] * cam[(0, j)] + cam[(1, j)] * cam[(1, j)])
                    .sum::<f64>()
                    / p as f64,
            );
            let sigma = spec.noise_sigma * radius;
            for j in vis.visible_indices() {
                for r in 0..2 {
                    w.as_mut_slice()[r * p + j] += sigma * normal(&mut rng);
                }
            }
        }
        frames.push(ObservationFrame::new(w, vis, t));
        truth.push(Shape3D::camera(cam));
        shapes.push(s);
    }
    let dataset = Dataset::new(frames, Some(truth))?;
    Ok((
        dataset,
        SynthModel {
            mean_shape: s0,
            bases,
            codes,
            rotations: rots,
            shapes,
        },
    ))
}

/// Synthetic NRSfM data: a mean shape plus `k_true` orthonormal deformation
/// bases driven by smooth code trajectories, viewed by rotating orthographic
/// cameras.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Dataset, DataError> {
    generate_synthetic_with_model(spec).map(|(d, _)| d)
}
