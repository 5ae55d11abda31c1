//! Loss terms: reconstruction residuals against the solved camera-frame
//! target, the code and decoder-weight regularizer, and the nuclear norm.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::AutodiffError;
use crate::matrix::Matrix;

pub const CODE_WEIGHT: f64 = 0.01;
pub const DECODER_WEIGHT: f64 = 1e-4;
pub const LOW_RANK_WEIGHT: f64 = 0.01;

/// Scalar values of every term of one step's objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct LossBreakdown {
    pub recon_ae: f64,
    pub recon_ad: f64,
    pub reg_code: f64,
    pub reg_weights: f64,
    /// Unweighted nuclear norm; enters the total with [`LOW_RANK_WEIGHT`].
    pub low_rank: f64,
    pub total: f64,
}

/// `0.01·‖φ‖²` summed over the rows of `codes`.
pub fn code_reg(t: &mut Tape, codes: Var) -> Var {
    let sq = t.squared_norm(codes);
    t.scale(sq, CODE_WEIGHT)
}

/// `1e-4·‖θ_d‖²` over all decoder arrays.
pub fn weight_reg(t: &mut Tape, arrays: &[Var]) -> Result<Var, AutodiffError> {
    let mut acc: Option<Var> = None;
    for &a in arrays {
        let sq = t.squared_norm(a);
        acc = Some(match acc {
            None => sq,
            Some(prev) => t.add(prev, sq)?,
        });
    }
    let total = match acc {
        Some(v) => v,
        None => t.constant(Matrix::zeros(1, 1)),
    };
    Ok(t.scale(total, DECODER_WEIGHT))
}

/// `0.01·‖φ‖² + 1e-4·‖θ_d‖²`.
pub fn reg_loss(t: &mut Tape, code: Var, decoder: &[Var]) -> Result<Var, AutodiffError> {
    let c = code_reg(t, code);
    let w = weight_reg(t, decoder)?;
    t.add(c, w)
}

/// `‖shape − Rᵀ·camera‖_F` (squared when `squared` is set).
///
/// `shape` is a canonical 3×P decoder output, adaptively normalized by the
/// caller when the frame has occlusions; `camera` is the solved target.
pub fn recon_loss(t: &mut Tape, shape: Var, rotation: Var, camera: Var, squared: bool) -> Result<Var, AutodiffError> {
    let rt = t.transpose(rotation);
    let target = t.matmul(rt, camera)?;
    let diff = t.sub(shape, target)?;
    Ok(if squared {
        t.squared_norm(diff)
    } else {
        t.frobenius_norm(diff)
    })
}

/// `‖f_d∘f_e∘f_d(φ) − Rᵀ·[W̃; zᵀ]‖_F`; `chain` is the 3×P output of the
/// decoder-encoder-decoder pass.
pub fn recon_ae_loss(
    t: &mut Tape,
    chain: Var,
    rotation: Var,
    camera: Var,
    squared: bool,
) -> Result<Var, AutodiffError> {
    recon_loss(t, chain, rotation, camera, squared)
}

/// `‖f_d(φ) − Rᵀ·[W̃; zᵀ]‖_F`; `decoded` is the 3×P decoder output.
pub fn recon_ad_loss(
    t: &mut Tape,
    decoded: Var,
    rotation: Var,
    camera: Var,
    squared: bool,
) -> Result<Var, AutodiffError> {
    recon_loss(t, decoded, rotation, camera, squared)
}

/// Both reconstruction losses against a fused camera-frame target. `chain`
/// and `decoded` must already be adaptively normalized for the frame's mask.
pub fn recon_losses_occluded(
    t: &mut Tape,
    chain: Var,
    decoded: Var,
    rotation: Var,
    fused: Var,
    squared: bool,
) -> Result<(Var, Var), AutodiffError> {
    let ae = recon_ae_loss(t, chain, rotation, fused, squared)?;
    let ad = recon_ad_loss(t, decoded, rotation, fused, squared)?;
    Ok((ae, ad))
}

/// Sum of singular values of a 3×P shape.
pub fn nuclear_norm_loss(t: &mut Tape, shape: Var) -> Result<Var, AutodiffError> {
    t.nuclear_norm(shape)
}

/// Plain-matrix residual norm, `‖shape − Rᵀ·camera‖_F`.
pub fn recon_value(shape: &Matrix, rotation: &Matrix, camera: &Matrix) -> f64 {
    let target = rotation.transpose().matmul(camera).expect("3x3 by 3xP");
    shape.zip_map(&target, |a, b| a - b).expect("3xP").frobenius()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reg_loss_weights() {
        let mut t = Tape::new();
        let code = t.leaf(Matrix::filled(1, 4, 1.0));
        let w = t.leaf(Matrix::zeros(2, 3));
        let l = reg_loss(&mut t, code, &[w]).unwrap();
        assert!((t.scalar(l) - 0.04).abs() < 1e-15);

        let mut t = Tape::new();
        let code = t.leaf(Matrix::zeros(1, 4));
        let w = t.leaf(Matrix::zeros(2, 3));
        let l = reg_loss(&mut t, code, &[w]).unwrap();
        assert_eq!(t.scalar(l), 0.0);
    }

    #[test]
    fn nuclear_norm_of_padded_identity() {
        let mut t = Tape::new();
        let s = t.constant(Matrix::from_fn(3, 5, |r, c| if r == c { 1.0 } else { 0.0 }));
        let n = nuclear_norm_loss(&mut t, s).unwrap();
        assert!((t.scalar(n) - 3.0).abs() < 1e-14);
        let z = t.constant(Matrix::zeros(3, 5));
        let n = nuclear_norm_loss(&mut t, z).unwrap();
        assert_eq!(t.scalar(n), 0.0);
    }
}
