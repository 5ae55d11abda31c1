//! Seeded randomness. Library code never draws from ambient entropy.

use rand::{Rng as _, SeedableRng};
use rand_distr::StandardNormal;

use crate::matrix::Matrix;

pub type Rng = rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

pub fn normal_matrix(rng: &mut Rng, rows: usize, cols: usize, sigma: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| sigma * normal(rng))
}

pub fn uniform_matrix(rng: &mut Rng, rows: usize, cols: usize, limit: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-limit..limit))
}

/// Fisher–Yates permutation of `0..n`.
pub fn permutation(rng: &mut Rng, n: usize) -> alloc::vec::Vec<usize> {
    let mut idx: alloc::vec::Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}
