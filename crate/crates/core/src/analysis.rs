//! Diagnostics: a linear camera probe and identity block structure of
//! pairwise distances.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::datamodel::{group_sets, BagMode, SetBag};
use crate::error::{argument, Error, Result};
use crate::evaluation::{distance, embed_sets, FeatureTable, ImageSet};
use crate::losses::Metric;
use crate::matrix::Matrix;
use crate::rng::{self, Stream};
use crate::sampling::{equally_spaced_frames, sample_view_bag};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    /// The learning rate halves every this many epochs.
    pub halve_every: usize,
    pub seed: u64,
    /// Rescale every feature dimension to zero mean and unit variance first.
    pub standardize: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            lr: 1e-3,
            halve_every: 50,
            seed: 0,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub accuracy: f64,
    pub prior_accuracy: f64,
    pub num_cameras: usize,
    pub epochs_trained: usize,
}

/// Expected accuracy of guessing by sampling from the camera frequencies: `Σ p_c²`.
pub fn prior_classifier_accuracy(counts: &[usize]) -> Result<f64> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return argument("camera histogram is empty");
    }
    let t = total as f64;
    Ok(counts.iter().map(|&c| (c as f64 / t) * (c as f64 / t)).sum())
}

/// Fits a softmax linear classifier (weights and bias) predicting the camera
/// from fixed features, full batch with Adam, and reports accuracy on the
/// same rows. Features are standardized per dimension first unless
/// `cfg.standardize` is off.
pub fn fit_camera_probe(table: &FeatureTable, cfg: &ProbeConfig) -> Result<ProbeReport> {
    let cams: BTreeMap<u32, usize> = {
        let mut m = BTreeMap::new();
        for r in &table.rows {
            *m.entry(r.camera).or_insert(0usize) += 1;
        }
        m
    };
    if cams.len() < 2 {
        return argument("camera probe needs at least two cameras");
    }
    if cfg.epochs == 0 || !(cfg.lr > 0.0) || cfg.halve_every == 0 {
        return argument("probe epochs, lr and halving period must be positive");
    }
    let index: BTreeMap<u32, usize> = cams.keys().enumerate().map(|(i, &c)| (c, i)).collect();
    let n = table.len();
    let d = table.dim();
    let c = cams.len();
    let labels: Vec<usize> = table.rows.iter().map(|r| index[&r.camera]).collect();

    let mut x = vec![0.0f64; n * d];
    for j in 0..d {
        let col: Vec<f64> = table.rows.iter().map(|r| r.feature[j] as f64).collect();
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let (shift, scale) = match cfg.standardize {
            true if var > 1e-24 => (mean, libm::sqrt(var)),
            true => (mean, 1.0),
            false => (0.0, 1.0),
        };
        for (i, v) in col.into_iter().enumerate() {
            x[i * d + j] = (v - shift) / scale;
        }
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("probe features are not finite".into()));
    }

    let mut rng = rng::stream(cfg.seed, Stream::Probe, 0);
    let bound = 1.0 / libm::sqrt(d.max(1) as f64);
    // weights (c×d) followed by the bias (c)
    let mut theta: Vec<f64> = (0..c * d).map(|_| rng.gen_range(-bound..bound) * 0.01).collect();
    theta.extend(core::iter::repeat(0.0).take(c));
    let mut m1 = vec![0.0; theta.len()];
    let mut m2 = vec![0.0; theta.len()];
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
    let mut logits = vec![0.0; n * c];
    for epoch in 0..cfg.epochs {
        forward(&theta, &x, n, d, c, &mut logits);
        let mut grad = vec![0.0; theta.len()];
        for i in 0..n {
            let row = &mut logits[i * c..(i + 1) * c];
            softmax_in_place(row);
            row[labels[i]] -= 1.0;
            for k in 0..c {
                let g = row[k] / n as f64;
                for j in 0..d {
                    grad[k * d + j] += g * x[i * d + j];
                }
                grad[c * d + k] += g;
            }
        }
        let lr = cfg.lr * libm::pow(0.5, (epoch / cfg.halve_every) as f64);
        let t = (epoch + 1) as i32;
        let bc1 = 1.0 - libm::pow(b1, t as f64);
        let bc2 = 1.0 - libm::pow(b2, t as f64);
        for p in 0..theta.len() {
            m1[p] = b1 * m1[p] + (1.0 - b1) * grad[p];
            m2[p] = b2 * m2[p] + (1.0 - b2) * grad[p] * grad[p];
            theta[p] -= lr * (m1[p] / bc1) / (libm::sqrt(m2[p] / bc2) + eps);
        }
    }
    forward(&theta, &x, n, d, c, &mut logits);
    let correct = (0..n)
        .filter(|&i| {
            let row = &logits[i * c..(i + 1) * c];
            let mut best = 0;
            for k in 1..c {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best == labels[i]
        })
        .count();
    let counts: Vec<usize> = cams.values().copied().collect();
    Ok(ProbeReport {
        accuracy: correct as f64 / n as f64,
        prior_accuracy: prior_classifier_accuracy(&counts)?,
        num_cameras: c,
        epochs_trained: cfg.epochs,
    })
}

fn forward(theta: &[f64], x: &[f64], n: usize, d: usize, c: usize, out: &mut [f64]) {
    for i in 0..n {
        let xi = &x[i * d..(i + 1) * d];
        for k in 0..c {
            let w = &theta[k * d..(k + 1) * d];
            out[i * c + k] = theta[c * d + k] + w.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = libm::exp(*v - max);
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Pairwise distances between bag features ordered by identity blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockReport {
    pub matrix: Matrix,
    /// Identity of each row.
    pub identities: Vec<u32>,
    pub intra_mean: f64,
    pub inter_mean: f64,
    pub ratio: f64,
}

/// Builds the distance matrix of `features` and its intra/inter identity means.
pub fn block_report(features: &[Vec<f32>], identities: &[u32], metric: Metric) -> Result<BlockReport> {
    let b = features.len();
    if b != identities.len() {
        return argument("one identity per feature row is required");
    }
    let mut matrix = Matrix::zeros(b, b);
    let (mut intra, mut n_intra, mut inter, mut n_inter) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..b {
        for j in i + 1..b {
            let v = distance(&features[i], &features[j], metric);
            matrix.set(i, j, v);
            matrix.set(j, i, v);
            if identities[i] == identities[j] {
                intra += v;
                n_intra += 1;
            } else {
                inter += v;
                n_inter += 1;
            }
        }
    }
    if n_intra == 0 || n_inter == 0 {
        return argument("need at least two identities with two bags each");
    }
    let intra_mean = intra / n_intra as f64;
    let inter_mean = inter / n_inter as f64;
    if !(inter_mean > 0.0) {
        return Err(Error::Numeric("all cross-identity distances are zero".into()));
    }
    Ok(BlockReport {
        matrix,
        identities: identities.to_vec(),
        intra_mean,
        inter_mean,
        ratio: intra_mean / inter_mean,
    })
}

/// Embeds `bags_per_id` bags for each of the first `ids` eligible identities
/// and reports their block structure. Tracklet bags are the identity's first
/// tracklets; view bags are drawn across cameras under `seed`.
pub fn distance_block_report(
    model: &crate::model::ModelBundle,
    set: ImageSet<'_>,
    mode: BagMode,
    ids: usize,
    bags_per_id: usize,
    frames_per_bag: usize,
    seed: u64,
) -> Result<BlockReport> {
    if ids < 2 || bags_per_id < 2 || frames_per_bag == 0 {
        return argument("need ids >= 2, bags_per_id >= 2 and frames_per_bag >= 1");
    }
    let mut by_id: BTreeMap<u32, Vec<SetBag>> = BTreeMap::new();
    for bag in group_sets(set.dataset, BagMode::Tracklet)? {
        by_id.entry(bag.identity).or_default().push(bag);
    }
    let views: BTreeMap<u32, SetBag> = group_sets(set.dataset, BagMode::Views)?
        .into_iter()
        .map(|b| (b.identity, b))
        .collect();
    let mut rng = rng::stream(seed, Stream::Analysis, 0);
    let mut sets = Vec::new();
    let mut labels = Vec::new();
    let eligible = by_id
        .iter()
        .filter(|(_, bags)| mode == BagMode::Views || bags.len() >= bags_per_id)
        .take(ids);
    let mut taken = 0;
    for (&identity, tracklets) in eligible {
        taken += 1;
        for b in 0..bags_per_id {
            let members = match mode {
                BagMode::Tracklet => {
                    let t = &tracklets[b];
                    equally_spaced_frames(t.len(), frames_per_bag)?
                        .into_iter()
                        .map(|p| t.members[p])
                        .collect()
                }
                BagMode::Views => sample_view_bag(set.dataset, &views[&identity], frames_per_bag, &mut rng)?.0.members,
            };
            sets.push(members);
            labels.push(identity);
        }
    }
    if taken < ids {
        return argument(format!(
            "only {taken} identities have {bags_per_id} {} bags, {ids} requested",
            match mode {
                BagMode::Tracklet => "tracklet",
                BagMode::Views => "view",
            }
        ));
    }
    let features = embed_sets(model, set.images, &sets)?;
    block_report(&features, &labels, Metric::Euclidean)
}
