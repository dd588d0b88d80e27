use alloc::vec;
use alloc::vec::Vec;

use super::{gemm, Param};
use crate::rng::Rng;

/// Bias-free linear map, weight stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Param,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(d_in: usize, d_out: usize, rng: &mut Rng) -> Self {
        Self {
            weight: Param::uniform(d_in * d_out, libm::sqrtf(1.0 / d_in as f32), rng),
            d_in,
            d_out,
        }
    }

    /// `x` is `rows × d_in`, returns `rows × d_out`.
    pub fn forward(&self, x: &[f32], rows: usize) -> Vec<f32> {
        let mut y = vec![0.0; rows * self.d_out];
        gemm(rows, self.d_in, self.d_out, x, false, &self.weight.value, true, 0.0, &mut y);
        y
    }

    pub fn backward(&mut self, x: &[f32], dy: &[f32], rows: usize) -> Vec<f32> {
        gemm(self.d_out, rows, self.d_in, dy, true, x, false, 1.0, &mut self.weight.grad);
        let mut dx = vec![0.0; rows * self.d_in];
        gemm(rows, self.d_out, self.d_in, dy, false, &self.weight.value, false, 0.0, &mut dx);
        dx
    }
}
