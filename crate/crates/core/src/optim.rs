//! Adam over a list of parameter arrays.

use alloc::vec::Vec;

use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per array plus the shared step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
    step: u64,
}

impl Adam {
    pub fn new<'a, I>(config: AdamConfig, params: I) -> Self
    where
        I: IntoIterator<Item = &'a Matrix>,
    {
        let first: Vec<Matrix> = params.into_iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        let second = first.clone();
        Self {
            config,
            first,
            second,
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update. `grads[i] == None` means a zero gradient;
    /// the moments still decay for that array.
    pub fn update(&mut self, params: &mut [&mut Matrix], grads: &[Option<&Matrix>]) {
        assert_eq!(params.len(), self.first.len(), "parameter count changed");
        assert_eq!(grads.len(), self.first.len(), "gradient count mismatch");
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - libm::pow(beta1, self.step as f64);
        let c2 = 1.0 - libm::pow(beta2, self.step as f64);
        for (i, p) in params.iter_mut().enumerate() {
            let m = self.first[i].as_mut_slice();
            let v = self.second[i].as_mut_slice();
            let values = p.as_mut_slice();
            let g = grads[i].map(|g| g.as_slice());
            for k in 0..values.len() {
                let gk = g.map_or(0.0, |g| g[k]);
                m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                values[k] -= learning_rate * mh / (libm::sqrt(vh) + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // After one step m̂ = g and v̂ = g², so the update is lr·g/(|g|+eps).
        let mut x = Matrix::from_vec(1, 2, alloc::vec![1.0, -2.0]).unwrap();
        let g = Matrix::from_vec(1, 2, alloc::vec![0.5, -4.0]).unwrap();
        let mut adam = Adam::new(AdamConfig::default(), [&x]);
        adam.update(&mut [&mut x], &[Some(&g)]);
        let e0 = 1.0 - 1e-3 * 0.5 / (0.5 + 1e-8);
        let e1 = -2.0 + 1e-3 * 4.0 / (4.0 + 1e-8);
        assert!((x.as_slice()[0] - e0).abs() < 1e-15);
        assert!((x.as_slice()[1] - e1).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_fresh_parameters() {
        let mut x = Matrix::filled(2, 2, 3.0);
        let before = x.clone();
        let mut adam = Adam::new(AdamConfig::default(), [&x]);
        adam.update(&mut [&mut x], &[None]);
        assert_eq!(x, before);
    }
}
