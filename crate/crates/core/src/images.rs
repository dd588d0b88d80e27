//! In-memory image storage and training-time augmentation.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{argument, Result};
use crate::rng::Rng;

/// Square RGB images in `[0, 1]`, interleaved (HWC), one per dataset sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBank {
    size: usize,
    data: Vec<f32>,
}

impl ImageBank {
    pub fn new(size: usize) -> Self {
        Self {
            size,
            data: Vec::new(),
        }
    }

    pub fn pixels_per_image(&self) -> usize {
        self.size * self.size * 3
    }

    /// Appends one image given as 8-bit RGB bytes.
    pub fn push_rgb8(&mut self, rgb: &[u8]) -> Result<()> {
        if rgb.len() != self.pixels_per_image() {
            return argument(format!(
                "image has {} bytes, expected {}",
                rgb.len(),
                self.pixels_per_image()
            ));
        }
        self.data.extend(rgb.iter().map(|&b| b as f32 / 255.0));
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn len(&self) -> usize {
        if self.size == 0 {
            0
        } else {
            self.data.len() / self.pixels_per_image()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn image(&self, index: usize) -> &[f32] {
        let n = self.pixels_per_image();
        &self.data[index * n..(index + 1) * n]
    }

    /// Copies the listed images into one contiguous batch buffer.
    pub fn gather(&self, indices: &[usize]) -> Vec<f32> {
        let mut out = Vec::with_capacity(indices.len() * self.pixels_per_image());
        for &i in indices {
            out.extend_from_slice(self.image(i));
        }
        out
    }

    /// Per-channel mean and standard deviation over all stored pixels.
    pub fn channel_stats(&self) -> ([f32; 3], [f32; 3]) {
        let mut sum = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        for px in self.data.chunks_exact(3) {
            for c in 0..3 {
                sum[c] += px[c] as f64;
                sq[c] += px[c] as f64 * px[c] as f64;
            }
        }
        let count = (self.data.len() / 3).max(1) as f64;
        let mut mean = [0.0f32; 3];
        let mut std = [1.0f32; 3];
        for c in 0..3 {
            let m = sum[c] / count;
            mean[c] = m as f32;
            std[c] = libm::sqrt((sq[c] / count - m * m).max(1e-8)) as f32;
        }
        (mean, std)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Augmentation {
    pub flip: bool,
    pub random_erase: bool,
}

impl Default for Augmentation {
    fn default() -> Self {
        Self {
            flip: true,
            random_erase: true,
        }
    }
}

impl Augmentation {
    pub fn none() -> Self {
        Self {
            flip: false,
            random_erase: false,
        }
    }

    /// Applies horizontal flip (p = 0.5) and random erasing (p = 0.5, area
    /// 2–40 %, aspect 0.3–3.3, filled with `fill`) to every image in `batch`.
    pub fn apply(&self, batch: &mut [f32], size: usize, fill: [f32; 3], rng: &mut Rng) {
        if !self.flip && !self.random_erase {
            return;
        }
        let per = size * size * 3;
        for img in batch.chunks_exact_mut(per) {
            if self.flip && rng.gen_bool(0.5) {
                for y in 0..size {
                    for x in 0..size / 2 {
                        let a = (y * size + x) * 3;
                        let b = (y * size + size - 1 - x) * 3;
                        for c in 0..3 {
                            img.swap(a + c, b + c);
                        }
                    }
                }
            }
            if self.random_erase && rng.gen_bool(0.5) {
                let area = (size * size) as f64;
                for _ in 0..10 {
                    let target = area * rng.gen_range(0.02..0.4);
                    let aspect = libm::exp(rng.gen_range(libm::log(0.3)..libm::log(1.0 / 0.3)));
                    let h = libm::round(libm::sqrt(target * aspect)) as usize;
                    let w = libm::round(libm::sqrt(target / aspect)) as usize;
                    if h == 0 || w == 0 || h >= size || w >= size {
                        continue;
                    }
                    let y0 = rng.gen_range(0..=size - h);
                    let x0 = rng.gen_range(0..=size - w);
                    for y in y0..y0 + h {
                        for x in x0..x0 + w {
                            img[(y * size + x) * 3..][..3].copy_from_slice(&fill);
                        }
                    }
                    break;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn bank_stores_and_gathers() {
        let mut bank = ImageBank::new(2);
        bank.push_rgb8(&[0; 12]).unwrap();
        bank.push_rgb8(&[255; 12]).unwrap();
        assert_eq!(bank.len(), 2);
        assert!(bank.push_rgb8(&[0; 11]).is_err());
        let g = bank.gather(&[1, 0, 1]);
        assert_eq!(g.len(), 36);
        assert_eq!(g[0], 1.0);
        assert_eq!(g[12], 0.0);
        let (mean, std) = bank.channel_stats();
        assert!((mean[0] - 0.5).abs() < 1e-6);
        assert!((std[1] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn augmentation_is_seeded_and_preserves_size() {
        let size = 16;
        let base: Vec<f32> = (0..size * size * 3 * 4).map(|i| (i % 97) as f32 / 97.0).collect();
        let aug = Augmentation::default();
        let mut a = base.clone();
        let mut b = base.clone();
        aug.apply(&mut a, size, [0.5; 3], &mut stream(3, Stream::Augment, 0));
        aug.apply(&mut b, size, [0.5; 3], &mut stream(3, Stream::Augment, 0));
        assert_eq!(a, b);
        assert_ne!(a, base);
        let mut c = base.clone();
        Augmentation::none().apply(&mut c, size, [0.5; 3], &mut stream(3, Stream::Augment, 0));
        assert_eq!(c, base);
    }
}
