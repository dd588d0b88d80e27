use alloc::vec;
use alloc::vec::Vec;

use super::{gemm, Param};
use crate::rng::Rng;

/// 3×3 convolution, padding 1, no bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub weight: Param,
    pub c_in: usize,
    pub c_out: usize,
    pub stride: usize,
}

const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

impl Conv2d {
    pub fn new(c_in: usize, c_out: usize, stride: usize, rng: &mut Rng) -> Self {
        let fan_in = (c_in * TAPS) as f32;
        Self {
            weight: Param::uniform(c_out * c_in * TAPS, libm::sqrtf(6.0 / fan_in), rng),
            c_in,
            c_out,
            stride,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        ((h + 2 - KERNEL) / self.stride + 1, (w + 2 - KERNEL) / self.stride + 1)
    }

    fn im2col(&self, x: &[f32], n: usize, h: usize, w: usize) -> Vec<f32> {
        let (ho, wo) = self.out_hw(h, w);
        let cols = n * ho * wo;
        let mut col = vec![0.0f32; self.c_in * TAPS * cols];
        for ci in 0..self.c_in {
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let row = &mut col[((ci * TAPS) + ky * KERNEL + kx) * cols..][..cols];
                    for b in 0..n {
                        let plane = &x[(ci * n + b) * h * w..][..h * w];
                        for oy in 0..ho {
                            let iy = (oy * self.stride + ky) as isize - 1;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let src = &plane[iy as usize * w..][..w];
                            let dst = &mut row[(b * ho + oy) * wo..][..wo];
                            for (ox, d) in dst.iter_mut().enumerate() {
                                let ix = (ox * self.stride + kx) as isize - 1;
                                if ix >= 0 && ix < w as isize {
                                    *d = src[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im(&self, col: &[f32], n: usize, h: usize, w: usize) -> Vec<f32> {
        let (ho, wo) = self.out_hw(h, w);
        let cols = n * ho * wo;
        let mut dx = vec![0.0f32; self.c_in * n * h * w];
        for ci in 0..self.c_in {
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let row = &col[((ci * TAPS) + ky * KERNEL + kx) * cols..][..cols];
                    for b in 0..n {
                        let plane = &mut dx[(ci * n + b) * h * w..][..h * w];
                        for oy in 0..ho {
                            let iy = (oy * self.stride + ky) as isize - 1;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let dst = &mut plane[iy as usize * w..][..w];
                            let src = &row[(b * ho + oy) * wo..][..wo];
                            for (ox, s) in src.iter().enumerate() {
                                let ix = (ox * self.stride + kx) as isize - 1;
                                if ix >= 0 && ix < w as isize {
                                    dst[ix as usize] += s;
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    /// Returns the output `[c_out][n][ho][wo]` and the column buffer needed
    /// by [`Conv2d::backward`].
    pub fn forward(&self, x: &[f32], n: usize, h: usize, w: usize) -> (Vec<f32>, Vec<f32>) {
        debug_assert_eq!(x.len(), self.c_in * n * h * w);
        let (ho, wo) = self.out_hw(h, w);
        let cols = n * ho * wo;
        let col = self.im2col(x, n, h, w);
        let mut out = vec![0.0f32; self.c_out * cols];
        gemm(
            self.c_out,
            self.c_in * TAPS,
            cols,
            &self.weight.value,
            false,
            &col,
            false,
            0.0,
            &mut out,
        );
        (out, col)
    }

    /// Accumulates the weight gradient; returns the input gradient when asked.
    pub fn backward(
        &mut self,
        col: &[f32],
        dy: &[f32],
        n: usize,
        h: usize,
        w: usize,
        need_dx: bool,
    ) -> Option<Vec<f32>> {
        let (ho, wo) = self.out_hw(h, w);
        let cols = n * ho * wo;
        let k = self.c_in * TAPS;
        gemm(self.c_out, cols, k, dy, false, col, true, 1.0, &mut self.weight.grad);
        if !need_dx {
            return None;
        }
        let mut dcol = vec![0.0f32; k * cols];
        gemm(k, self.c_out, cols, &self.weight.value, true, dy, false, 0.0, &mut dcol);
        Some(self.col2im(&dcol, n, h, w))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn direct(conv: &Conv2d, x: &[f32], n: usize, h: usize, w: usize) -> Vec<f32> {
        let (ho, wo) = conv.out_hw(h, w);
        let mut out = vec![0.0; conv.c_out * n * ho * wo];
        for co in 0..conv.c_out {
            for b in 0..n {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for ci in 0..conv.c_in {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let iy = (oy * conv.stride + ky) as isize - 1;
                                    let ix = (ox * conv.stride + kx) as isize - 1;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    acc += conv.weight.value[((co * conv.c_in + ci) * 3 + ky) * 3 + kx]
                                        * x[((ci * n + b) * h + iy as usize) * w + ix as usize];
                                }
                            }
                        }
                        out[((co * n + b) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn forward_matches_direct_convolution() {
        let mut rng = stream(0, Stream::Init, 0);
        for stride in [1, 2] {
            let conv = Conv2d::new(2, 3, stride, &mut rng);
            let (n, h, w) = (2, 5, 6);
            let x: Vec<f32> = (0..2 * n * h * w).map(|i| ((i * 7 % 11) as f32) / 11.0 - 0.5).collect();
            let (out, _) = conv.forward(&x, n, h, w);
            let expect = direct(&conv, &x, n, h, w);
            assert_eq!(out.len(), expect.len());
            for (a, b) in out.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = stream(1, Stream::Init, 0);
        let mut conv = Conv2d::new(2, 2, 2, &mut rng);
        let (n, h, w) = (1, 4, 4);
        let x: Vec<f32> = (0..2 * n * h * w).map(|i| ((i * 5 % 13) as f32) / 13.0 - 0.4).collect();
        let (out, col) = conv.forward(&x, n, h, w);
        // loss = Σ out·r with fixed r
        let r: Vec<f32> = (0..out.len()).map(|i| (i as f32 * 0.3).sin()).collect();
        let dx = conv.backward(&col, &r, n, h, w, true).unwrap();
        let loss = |conv: &Conv2d, x: &[f32]| -> f64 {
            let (o, _) = conv.forward(x, n, h, w);
            o.iter().zip(&r).map(|(a, b)| (*a as f64) * (*b as f64)).sum()
        };
        let eps = 1e-2f32;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += eps;
            let mut xm = x.clone();
            xm[i] -= eps;
            let fd = (loss(&conv, &xp) - loss(&conv, &xm)) / (2.0 * eps as f64);
            assert!((fd - dx[i] as f64).abs() < 1e-3, "dx[{i}] {fd} vs {}", dx[i]);
        }
        for i in 0..conv.weight.len() {
            let mut c = conv.clone();
            c.weight.value[i] += eps;
            let lp = loss(&c, &x);
            c.weight.value[i] -= 2.0 * eps;
            let lm = loss(&c, &x);
            let fd = (lp - lm) / (2.0 * eps as f64);
            assert!((fd - conv.weight.grad[i] as f64).abs() < 1e-3);
        }
    }
}
