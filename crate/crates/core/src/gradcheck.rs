//! Central finite-difference checks for tape gradients.
//!
//! The numerical side never touches [`Tape::backward`]; it only re-evaluates
//! the forward graph with perturbed inputs.

use alloc::string::String;
use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::error::AutodiffError;
use crate::matrix::Matrix;

pub const DEFAULT_STEP: f64 = 1e-6;

/// Outcome of comparing analytic and numerical gradients for one input set.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Per input: `max |analytic − numeric| / max(max |analytic|, max |numeric|)`.
    pub relative_errors: Vec<f64>,
    pub analytic: Vec<Matrix>,
    pub numeric: Vec<Matrix>,
}

impl GradCheck {
    pub fn max_relative_error(&self) -> f64 {
        self.relative_errors.iter().copied().fold(0.0, f64::max)
    }

    /// Relative error with all inputs treated as one flat parameter vector.
    pub fn global_relative_error(&self) -> f64 {
        let mut diff: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for (a, n) in self.analytic.iter().zip(&self.numeric) {
            diff = diff.max(a.max_abs_diff(n));
            for v in a.as_slice().iter().chain(n.as_slice()) {
                scale = scale.max(libm::fabs(*v));
            }
        }
        if scale < 1e-300 {
            diff
        } else {
            diff / scale
        }
    }
}

/// Norm-wise relative error, with both-zero treated as exact agreement.
pub fn relative_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
    let scale = analytic
        .as_slice()
        .iter()
        .chain(numeric.as_slice())
        .map(|v| libm::fabs(*v))
        .fold(0.0, f64::max);
    let diff = analytic.max_abs_diff(numeric);
    if scale < 1e-300 {
        diff
    } else {
        diff / scale
    }
}

/// Compares the tape gradient of `build` against central differences with
/// step `h` for every entry of every input.
pub fn check<F, E>(inputs: &[Matrix], h: f64, build: F) -> Result<GradCheck, E>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
    E: From<AutodiffError>,
{
    let eval = |values: &[Matrix]| -> Result<f64, E> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|m| tape.leaf(m.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        Ok(tape.scalar(loss))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    let grads = tape.backward(loss).map_err(E::from)?;
    let analytic: Vec<Matrix> = vars.iter().map(|v| grads.wrt(&tape, *v)).collect();

    let mut work: Vec<Matrix> = inputs.to_vec();
    let mut numeric = Vec::with_capacity(inputs.len());
    for k in 0..inputs.len() {
        let mut g = Matrix::zeros(inputs[k].rows(), inputs[k].cols());
        for idx in 0..inputs[k].len() {
            let orig = work[k].as_slice()[idx];
            work[k].as_mut_slice()[idx] = orig + h;
            let plus = eval(&work)?;
            work[k].as_mut_slice()[idx] = orig - h;
            let minus = eval(&work)?;
            work[k].as_mut_slice()[idx] = orig;
            g.as_mut_slice()[idx] = (plus - minus) / (2.0 * h);
        }
        numeric.push(g);
    }
    let relative_errors = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(a, n))
        .collect();
    Ok(GradCheck {
        relative_errors,
        analytic,
        numeric,
    })
}

/// One named line of a gradient-check suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteEntry {
    pub name: String,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub trials: usize,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.max_relative_error <= self.tolerance
    }
}
