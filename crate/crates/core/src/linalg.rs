//! Closed-form and Jacobi factorizations for the tiny matrices the solver uses.

use alloc::vec;
use alloc::vec::Vec;

use crate::matrix::Matrix;

/// Condition numbers above this are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Thin SVD of a 2×3 matrix, `a = u · diag(sigma) · vᵀ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Svd2x3 {
    /// Columns are the left singular vectors; always a proper rotation.
    pub u: [[f64; 2]; 2],
    /// Descending, nonnegative.
    pub sigma: [f64; 2],
    /// 3×2, orthonormal columns.
    pub v: [[f64; 2]; 3],
}

/// SVD of a 2×3 matrix from the analytic eigen-decomposition of `a·aᵀ`.
///
/// The left basis is parameterized by a single angle so it varies smoothly
/// with the input away from repeated singular values.
pub fn svd_2x3(a: &Matrix) -> Svd2x3 {
    debug_assert_eq!(a.shape(), (2, 3));
    let r0 = a.row(0);
    let r1 = a.row(1);
    let p = dot3(r0, r0);
    let q = dot3(r0, r1);
    let r = dot3(r1, r1);
    let theta = 0.5 * libm::atan2(2.0 * q, p - r);
    let (s, c) = libm::sincos(theta);
    let u1 = [c, s];
    let u2 = [-s, c];
    let at_u = |u: [f64; 2]| {
        [
            r0[0] * u[0] + r1[0] * u[1],
            r0[1] * u[0] + r1[1] * u[1],
            r0[2] * u[0] + r1[2] * u[1],
        ]
    };
    let w1 = at_u(u1);
    let w2 = at_u(u2);
    let s1 = norm3(&w1);
    let s2 = norm3(&w2);

    let v1 = if s1 > 0.0 {
        scale3(&w1, 1.0 / s1)
    } else {
        [1.0, 0.0, 0.0]
    };
    let v2 = if s2 > 1e-10 * s1.max(f64::MIN_POSITIVE) {
        scale3(&w2, 1.0 / s2)
    } else {
        any_orthogonal(&v1)
    };
    Svd2x3 {
        u: [[u1[0], u2[0]], [u1[1], u2[1]]],
        sigma: [s1, s2],
        v: [[v1[0], v2[0]], [v1[1], v2[1]], [v1[2], v2[2]]],
    }
}

impl Svd2x3 {
    pub fn u_matrix(&self) -> Matrix {
        Matrix::from_rows(&self.u)
    }

    pub fn v_matrix(&self) -> Matrix {
        Matrix::from_rows(&self.v)
    }

    /// `u · vᵀ`, the nearest matrix with orthonormal rows.
    pub fn polar(&self) -> Matrix {
        let mut out = Matrix::zeros(2, 3);
        for i in 0..2 {
            for j in 0..3 {
                out[(i, j)] = self.u[i][0] * self.v[j][0] + self.u[i][1] * self.v[j][1];
            }
        }
        out
    }
}

/// Thin SVD of a short, wide matrix (`rows ≤ cols`) by one-sided Jacobi
/// rotations applied to its rows.
///
/// Returns `(u, sigma, vt)` with `u` square orthogonal, `sigma` descending and
/// `vt` holding the right singular vectors as rows (zero rows for vanishing
/// singular values).
pub fn svd_wide(a: &Matrix) -> (Matrix, Vec<f64>, Matrix) {
    let (m, n) = a.shape();
    debug_assert!(m <= n);
    let mut y = a.clone();
    let mut j = Matrix::identity(m);
    for _sweep in 0..60 {
        let mut off = 0.0f64;
        for p in 0..m {
            for q in (p + 1)..m {
                let alpha: f64 = y.row(p).iter().map(|v| v * v).sum();
                let beta: f64 = y.row(q).iter().map(|v| v * v).sum();
                let gamma: f64 = y.row(p).iter().zip(y.row(q)).map(|(x, z)| x * z).sum();
                if gamma == 0.0 {
                    continue;
                }
                let scale = libm::sqrt(alpha * beta);
                if scale == 0.0 {
                    continue;
                }
                off = off.max(libm::fabs(gamma) / scale);
                if libm::fabs(gamma) <= 1e-15 * scale {
                    continue;
                }
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = libm::copysign(1.0, zeta) / (libm::fabs(zeta) + libm::sqrt(1.0 + zeta * zeta));
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = c * t;
                rotate_rows(&mut y, p, q, c, s);
                rotate_rows(&mut j, p, q, c, s);
            }
        }
        if off <= 1e-15 {
            break;
        }
    }
    let mut sigma: Vec<f64> = (0..m)
        .map(|i| libm::sqrt(y.row(i).iter().map(|v| v * v).sum()))
        .collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&x, &z| sigma[z].partial_cmp(&sigma[x]).unwrap_or(core::cmp::Ordering::Equal));

    // y = j·a, so a = jᵀ·y and the left vectors are the rows of j.
    let mut u = Matrix::zeros(m, m);
    let mut vt = Matrix::zeros(m, n);
    let sorted: Vec<f64> = order.iter().map(|&i| sigma[i]).collect();
    let tiny = sorted.first().copied().unwrap_or(0.0) * 1e-14;
    for (dst, &src) in order.iter().enumerate() {
        for r in 0..m {
            u[(r, dst)] = j[(src, r)];
        }
        if sigma[src] > tiny && sigma[src] > 0.0 {
            let inv = 1.0 / sigma[src];
            for c in 0..n {
                vt[(dst, c)] = y[(src, c)] * inv;
            }
        }
    }
    sigma = sorted;
    (u, sigma, vt)
}

fn rotate_rows(m: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let n = m.cols();
    let data = m.as_mut_slice();
    for k in 0..n {
        let xp = data[p * n + k];
        let xq = data[q * n + k];
        data[p * n + k] = c * xp - s * xq;
        data[q * n + k] = s * xp + c * xq;
    }
}

/// Inverse of a 3×3 matrix via the adjugate, rejecting ill-conditioned input.
///
/// Returns the inverse and a Frobenius condition estimate, or `Err(condition)`.
pub fn inverse3(a: &Matrix) -> Result<Matrix, f64> {
    debug_assert_eq!(a.shape(), (3, 3));
    let m = |r: usize, c: usize| a[(r, c)];
    let c00 = m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1);
    let c01 = m(1, 2) * m(2, 0) - m(1, 0) * m(2, 2);
    let c02 = m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0);
    let det = m(0, 0) * c00 + m(0, 1) * c01 + m(0, 2) * c02;
    if det == 0.0 || !det.is_finite() {
        return Err(f64::INFINITY);
    }
    let inv_det = 1.0 / det;
    let adj = [
        [
            c00,
            m(0, 2) * m(2, 1) - m(0, 1) * m(2, 2),
            m(0, 1) * m(1, 2) - m(0, 2) * m(1, 1),
        ],
        [
            c01,
            m(0, 0) * m(2, 2) - m(0, 2) * m(2, 0),
            m(0, 2) * m(1, 0) - m(0, 0) * m(1, 2),
        ],
        [
            c02,
            m(0, 1) * m(2, 0) - m(0, 0) * m(2, 1),
            m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0),
        ],
    ];
    let inv = Matrix::from_fn(3, 3, |r, c| adj[r][c] * inv_det);
    let condition = a.frobenius() * inv.frobenius();
    if !(condition.is_finite() && condition < MAX_CONDITION) {
        return Err(condition);
    }
    Ok(inv)
}

#[inline]
pub fn dot3(a: &[f64], b: &[f64]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross3(a: &[f64], b: &[f64]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm3(a: &[f64]) -> f64 {
    libm::sqrt(dot3(a, a))
}

#[inline]
fn scale3(a: &[f64; 3], k: f64) -> [f64; 3] {
    [a[0] * k, a[1] * k, a[2] * k]
}

/// A unit vector orthogonal to the unit vector `v`.
fn any_orthogonal(v: &[f64; 3]) -> [f64; 3] {
    let axis = if libm::fabs(v[0]) < 0.9 {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 1.0, 0.0]
    };
    let w = cross3(v, &axis);
    scale3(&w, 1.0 / norm3(&w))
}

/// Modified Gram–Schmidt on a list of vectors; returns the orthonormal set.
/// Vectors that become numerically dependent are dropped.
pub fn gram_schmidt(vectors: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(vectors.len());
    for v in vectors {
        let mut w = v.clone();
        for b in &basis {
            let proj: f64 = w.iter().zip(b).map(|(x, y)| x * y).sum();
            for (wi, bi) in w.iter_mut().zip(b) {
                *wi -= proj * bi;
            }
        }
        let norm = libm::sqrt(w.iter().map(|x| x * x).sum::<f64>());
        let reference = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
        if norm > 1e-10 * reference.max(f64::MIN_POSITIVE) {
            basis.push(w.iter().map(|x| x / norm).collect());
        }
    }
    basis
}

/// Eigenvalues of a symmetric 3×3 matrix, descending, by cyclic Jacobi.
pub fn sym_eigenvalues3(a: &Matrix) -> [f64; 3] {
    let mut m = a.clone();
    for _ in 0..50 {
        let off = m[(0, 1)] * m[(0, 1)] + m[(0, 2)] * m[(0, 2)] + m[(1, 2)] * m[(1, 2)];
        if off <= 1e-30 * m.frobenius_sq().max(f64::MIN_POSITIVE) {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if m[(p, q)] == 0.0 {
                continue;
            }
            let theta = 0.5 * libm::atan2(2.0 * m[(p, q)], m[(q, q)] - m[(p, p)]);
            let (s, c) = libm::sincos(theta);
            let mut g = Matrix::identity(3);
            g[(p, p)] = c;
            g[(q, q)] = c;
            g[(p, q)] = s;
            g[(q, p)] = -s;
            // m ← gᵀ m g
            let gm = g.transpose().matmul(&m).expect("3x3");
            m = gm.matmul(&g).expect("3x3");
        }
    }
    let mut ev = [m[(0, 0)], m[(1, 1)], m[(2, 2)]];
    ev.sort_by(|a, b| b.partial_cmp(a).unwrap_or(core::cmp::Ordering::Equal));
    ev
}

/// Column sums, used by normalization helpers.
pub fn row_means(a: &Matrix, columns: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; a.rows()];
    if columns.is_empty() {
        return out;
    }
    for (r, o) in out.iter_mut().enumerate() {
        *o = columns.iter().map(|&c| a[(r, c)]).sum::<f64>() / columns.len() as f64;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reconstruct(svd: &Svd2x3) -> Matrix {
        let u = svd.u_matrix();
        let s = Matrix::diag(&svd.sigma);
        u.matmul(&s).unwrap().matmul(&svd.v_matrix().transpose()).unwrap()
    }

    #[test]
    fn svd_of_orthonormal_rows() {
        let a = Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        let svd = svd_2x3(&a);
        assert!((svd.sigma[0] - 1.0).abs() < 1e-15 && (svd.sigma[1] - 1.0).abs() < 1e-15);
        assert!(svd.polar().max_abs_diff(&a) < 1e-15);
    }

    #[test]
    fn svd_of_scaled_rows() {
        let a = Matrix::from_rows(&[[3.0, 0.0, 0.0], [0.0, 3.0, 0.0]]);
        let svd = svd_2x3(&a);
        assert!((svd.sigma[0] - 3.0).abs() < 1e-14 && (svd.sigma[1] - 3.0).abs() < 1e-14);
        let expect = Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        assert!(svd.polar().max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn svd_reconstructs_random_input() {
        let a = Matrix::from_rows(&[[0.3, -1.2, 0.7], [2.1, 0.4, -0.9]]);
        let svd = svd_2x3(&a);
        assert!(reconstruct(&svd).max_abs_diff(&a) < 1e-14);
        assert!(svd.sigma[0] >= svd.sigma[1]);
        let v = svd.v_matrix();
        let vtv = v.transpose().matmul(&v).unwrap();
        assert!(vtv.max_abs_diff(&Matrix::identity(2)) < 1e-14);
    }

    #[test]
    fn svd_rank_one_still_orthonormal() {
        let a = Matrix::from_rows(&[[1.0, 2.0, 3.0], [2.0, 4.0, 6.0]]);
        let svd = svd_2x3(&a);
        assert!(svd.sigma[1] < 1e-12);
        let v = svd.v_matrix();
        let vtv = v.transpose().matmul(&v).unwrap();
        assert!(vtv.max_abs_diff(&Matrix::identity(2)) < 1e-12);
    }

    #[test]
    fn wide_svd_matches_input() {
        let a = Matrix::from_fn(3, 7, |r, c| libm::sin((r * 7 + c) as f64 * 1.3) + 0.1 * r as f64);
        let (u, s, vt) = svd_wide(&a);
        let back = u.matmul(&Matrix::diag(&s)).unwrap().matmul(&vt).unwrap();
        assert!(back.max_abs_diff(&a) < 1e-13);
        assert!(s[0] >= s[1] && s[1] >= s[2]);
    }

    #[test]
    fn inverse_of_diagonal() {
        let inv = inverse3(&Matrix::diag(&[2.0, 4.0, 5.0])).unwrap();
        assert_eq!(inv, Matrix::diag(&[0.5, 0.25, 0.2]));
        assert_eq!(inverse3(&Matrix::identity(3)).unwrap(), Matrix::identity(3));
    }

    #[test]
    fn inverse_rejects_singular() {
        let a = Matrix::from_rows(&[[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 1.0, 1.0]]);
        assert!(inverse3(&a).is_err());
    }

    #[test]
    fn gram_schmidt_orthonormal() {
        let basis = gram_schmidt(&[
            alloc::vec![1.0, 1.0, 0.0],
            alloc::vec![1.0, 0.0, 1.0],
            alloc::vec![2.0, 1.0, 1.0],
        ]);
        assert_eq!(basis.len(), 2);
        let d: f64 = basis[0].iter().zip(&basis[1]).map(|(a, b)| a * b).sum();
        assert!(d.abs() < 1e-15);
    }
}
