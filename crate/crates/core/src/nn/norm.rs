use alloc::vec;
use alloc::vec::Vec;

use super::Param;

/// Per-channel batch normalization over a `[channels][count]` buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub momentum: f32,
    pub eps: f32,
}

/// Saved activations for the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    xhat: Vec<f32>,
    inv_std: Vec<f32>,
    count: usize,
}

/// Batch statistics (biased variance) of one forward pass.
#[derive(Debug, Clone)]
pub struct BnStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    pub count: usize,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::filled(channels, 1.0),
            beta: Param::filled(channels, 0.0),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Normalizes with the statistics of `x` itself.
    pub fn forward_batch(&self, x: &[f32], count: usize, keep: bool) -> (Vec<f32>, Option<BnCache>, BnStats) {
        let c = self.channels();
        debug_assert_eq!(x.len(), c * count);
        let mut y = vec![0.0; x.len()];
        let mut xhat = if keep { vec![0.0; x.len()] } else { Vec::new() };
        let mut inv_std = vec![0.0; c];
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ch in 0..c {
            let row = &x[ch * count..][..count];
            let m = row.iter().map(|&v| v as f64).sum::<f64>() / count as f64;
            let v = row.iter().map(|&v| (v as f64 - m) * (v as f64 - m)).sum::<f64>() / count as f64;
            let is = 1.0 / libm::sqrt(v + self.eps as f64);
            mean[ch] = m as f32;
            var[ch] = v as f32;
            inv_std[ch] = is as f32;
            let (g, b) = (self.gamma.value[ch], self.beta.value[ch]);
            let out = &mut y[ch * count..][..count];
            for (i, (o, &xv)) in out.iter_mut().zip(row).enumerate() {
                let h = ((xv as f64 - m) * is) as f32;
                *o = g * h + b;
                if keep {
                    xhat[ch * count + i] = h;
                }
            }
        }
        let cache = keep.then_some(BnCache { xhat, inv_std, count });
        (y, cache, BnStats { mean, var, count })
    }

    /// Normalizes with the running statistics.
    pub fn forward_eval(&self, x: &[f32], count: usize) -> Vec<f32> {
        let mut y = vec![0.0; x.len()];
        for ch in 0..self.channels() {
            let is = 1.0 / libm::sqrtf(self.running_var[ch] + self.eps);
            let scale = self.gamma.value[ch] * is;
            let shift = self.beta.value[ch] - self.running_mean[ch] * scale;
            for (o, &xv) in y[ch * count..][..count].iter_mut().zip(&x[ch * count..][..count]) {
                *o = xv * scale + shift;
            }
        }
        y
    }

    /// Exponential moving update of the running statistics (unbiased variance).
    pub fn update_running(&mut self, stats: &BnStats) {
        let unbias = if stats.count > 1 {
            stats.count as f32 / (stats.count - 1) as f32
        } else {
            1.0
        };
        let mo = self.momentum;
        for ch in 0..self.channels() {
            self.running_mean[ch] = (1.0 - mo) * self.running_mean[ch] + mo * stats.mean[ch];
            self.running_var[ch] = (1.0 - mo) * self.running_var[ch] + mo * stats.var[ch] * unbias;
        }
    }

    pub fn backward(&mut self, cache: &BnCache, dy: &[f32]) -> Vec<f32> {
        let n = cache.count;
        let mut dx = vec![0.0; dy.len()];
        for ch in 0..self.channels() {
            let dyr = &dy[ch * n..][..n];
            let xh = &cache.xhat[ch * n..][..n];
            let mut sum_dy = 0.0f64;
            let mut sum_dy_xh = 0.0f64;
            for (&d, &h) in dyr.iter().zip(xh) {
                sum_dy += d as f64;
                sum_dy_xh += d as f64 * h as f64;
            }
            self.beta.grad[ch] += sum_dy as f32;
            self.gamma.grad[ch] += sum_dy_xh as f32;
            let k = self.gamma.value[ch] as f64 * cache.inv_std[ch] as f64 / n as f64;
            for (o, (&d, &h)) in dx[ch * n..][..n].iter_mut().zip(dyr.iter().zip(xh)) {
                *o = (k * (n as f64 * d as f64 - sum_dy - h as f64 * sum_dy_xh)) as f32;
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_forward_standardizes() {
        let bn = BatchNorm::new(2);
        let x = [1.0, 2.0, 3.0, 4.0, 10.0, 10.0, 10.0, 10.0];
        let (y, _, stats) = bn.forward_batch(&x, 4, false);
        let m: f32 = y[..4].iter().sum::<f32>() / 4.0;
        assert!(m.abs() < 1e-6);
        assert!(y[4..].iter().all(|v| v.abs() < 1e-6));
        assert_eq!(stats.mean, vec![2.5, 10.0]);
    }

    #[test]
    fn eval_with_identity_statistics_is_identity() {
        let mut bn = BatchNorm::new(3);
        bn.eps = 0.0;
        let x = [0.5, -1.0, 2.0, 3.0, 0.0, 7.0];
        assert_eq!(bn.forward_eval(&x, 2), x.to_vec());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut bn = BatchNorm::new(2);
        bn.gamma.value = vec![1.3, 0.7];
        bn.beta.value = vec![0.1, -0.2];
        let x: Vec<f32> = vec![0.3, -1.2, 0.8, 2.0, 1.1, 0.4, -0.5, 0.9];
        let r: Vec<f32> = vec![0.5, -0.3, 0.2, 0.9, -0.7, 0.1, 0.4, -0.6];
        let (_, cache, _) = bn.forward_batch(&x, 4, true);
        let dx = bn.backward(&cache.unwrap(), &r);
        let loss = |x: &[f32]| -> f64 {
            let (y, _, _) = bn.forward_batch(x, 4, false);
            y.iter().zip(&r).map(|(a, b)| *a as f64 * *b as f64).sum()
        };
        let eps = 1e-3;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += eps;
            let mut xm = x.clone();
            xm[i] -= eps;
            let fd = (loss(&xp) - loss(&xm)) / (2.0 * eps as f64);
            assert!((fd - dx[i] as f64).abs() < 2e-3, "{fd} vs {}", dx[i]);
        }
    }
}
