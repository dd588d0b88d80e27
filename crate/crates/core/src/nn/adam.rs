use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::Param;

/// Moment hyperparameters of the Adam optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are indexed by parameter position, so
/// the caller must always pass parameters in the same order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub first: Vec<Vec<f32>>,
    pub second: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn update(&mut self, params: &mut [&mut Param], lr: f32) {
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.second = self.first.clone();
        }
        assert_eq!(self.first.len(), params.len(), "parameter list changed between steps");
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - libm::powf(beta1, self.step as f32);
        let bc2 = 1.0 - libm::powf(beta2, self.step as f32);
        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p.value[i] -= lr * mhat / (libm::sqrtf(vhat) + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = Param::new(vec![1.0, -1.0]);
        p.grad = vec![0.5, -2.0];
        let mut adam = Adam::new(AdamConfig::default());
        adam.update(&mut [&mut p], 0.1);
        assert!((p.value[0] - 0.9).abs() < 1e-5);
        assert!((p.value[1] + 0.9).abs() < 1e-5);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = Param::new(vec![3.0]);
        let mut adam = Adam::new(AdamConfig::default());
        for _ in 0..2000 {
            p.grad[0] = 2.0 * (p.value[0] - 1.0);
            adam.update(&mut [&mut p], 0.01);
        }
        assert!((p.value[0] - 1.0).abs() < 1e-2);
    }
}
