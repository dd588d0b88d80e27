//! Minimal layers with explicit forward/backward passes.
//!
//! Convolutional activations use a channel-major `[C][N][H][W]` layout so a
//! whole batch is one matrix product per layer and batch-norm statistics run
//! over contiguous rows.

mod adam;
mod conv;
mod linear;
mod norm;

pub use adam::{Adam, AdamConfig};
pub use conv::Conv2d;
pub use linear::Linear;
pub use norm::{BatchNorm, BnCache, BnStats};

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng as _;

use crate::rng::Rng;

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
}

impl Param {
    pub fn new(value: Vec<f32>) -> Self {
        let grad = vec![0.0; value.len()];
        Self { value, grad }
    }

    pub fn filled(len: usize, v: f32) -> Self {
        Self::new(vec![v; len])
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(len: usize, bound: f32, rng: &mut Rng) -> Self {
        Self::new((0..len).map(|_| rng.gen_range(-bound..=bound)).collect())
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// `c = a·b + beta·c` for row-major operands, with optional transposition of
/// `a` (stored k×m) or `b` (stored n×k).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_transposed: bool,
    b: &[f32],
    b_transposed: bool,
    beta: f32,
    c: &mut [f32],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every access implied by the strides.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
