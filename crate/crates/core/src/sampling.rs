//! Batch composition: P×K identity batches, equally spaced frames, teacher
//! view bags and student subsets.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::datamodel::{group_sets, BagMode, Dataset, SetBag};
use crate::error::{argument, config, Result};
use crate::rng::{self, Rng, Stream};

/// Where the teacher's distillation bags come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistillSource {
    /// Frames drawn round-robin across the identity's cameras.
    Views,
    /// Equally spaced frames of one random tracklet (time distillation).
    Tracklet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    /// P: identities per batch.
    pub identities_per_batch: usize,
    /// K: bags per identity in a batch.
    pub bags_per_identity: usize,
    /// Frames per tracklet bag when training the teacher.
    pub frames_per_bag: usize,
    /// N: frames in each teacher bag during distillation.
    pub teacher_frames: usize,
    /// M: frames in each student bag during distillation.
    pub student_frames: usize,
    pub seed: u64,
    pub distill_source: DistillSource,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            identities_per_batch: 8,
            bags_per_identity: 4,
            frames_per_bag: 8,
            teacher_frames: 8,
            student_frames: 2,
            seed: 0,
            distill_source: DistillSource::Views,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, triplet_enabled: bool) -> Result<()> {
        if self.identities_per_batch < 2 {
            return config("P (identities per batch) must be >= 2");
        }
        if self.bags_per_identity < 1 {
            return config("K (bags per identity) must be >= 1");
        }
        if triplet_enabled && self.bags_per_identity < 2 {
            return config("K (bags per identity) must be >= 2 when the triplet loss is enabled");
        }
        if self.frames_per_bag < 1 {
            return config("frames_per_bag must be >= 1");
        }
        if self.student_frames < 1 || self.student_frames >= self.teacher_frames {
            return config(format!(
                "student/teacher bag sizes must satisfy 1 <= M < N (got M={}, N={})",
                self.student_frames, self.teacher_frames
            ));
        }
        Ok(())
    }
}

/// One batch: P distinct identities, each with K bags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchSpec {
    pub bags: Vec<SetBag>,
    pub labels: Vec<u32>,
}

/// Returns `n` frame positions equally spaced over a tracklet of length `len`:
/// `round(i·(len−1)/(n−1))`, rounding halves up.
pub fn equally_spaced_frames(len: usize, n: usize) -> Result<Vec<usize>> {
    if len == 0 || n == 0 {
        return argument("tracklet length and frame count must be >= 1");
    }
    if n == 1 {
        return Ok(alloc::vec![0]);
    }
    let span = (len - 1) as u64;
    let steps = (n - 1) as u64;
    // floor((2·i·span + steps) / (2·steps)) == round-half-up(i·span/steps), in exact integers.
    Ok((0..n as u64)
        .map(|i| ((2 * i * span + steps) / (2 * steps)) as usize)
        .collect())
}

/// Tracklet bags keyed by identity.
fn tracklets_by_identity(dataset: &Dataset) -> Result<BTreeMap<u32, Vec<SetBag>>> {
    let mut map: BTreeMap<u32, Vec<SetBag>> = BTreeMap::new();
    for bag in group_sets(dataset, BagMode::Tracklet)? {
        map.entry(bag.identity).or_default().push(bag);
    }
    Ok(map)
}

/// Builds the batches of one epoch.
///
/// Identities are shuffled and cut into chunks of P; the final short chunk is
/// topped up with other identities. Each identity contributes K tracklet bags,
/// drawn without replacement when it has at least K, otherwise with
/// replacement. Deterministic in `(cfg.seed, epoch)`.
pub fn pk_batches(
    dataset: &Dataset,
    cfg: &SamplerConfig,
    epoch: u64,
    triplet_enabled: bool,
) -> Result<Vec<BatchSpec>> {
    let by_id = tracklets_by_identity(dataset)?;
    let p = cfg.identities_per_batch;
    let k = cfg.bags_per_identity;
    if p < 2 {
        return config("P (identities per batch) must be >= 2");
    }
    if by_id.len() < p {
        return config(format!(
            "dataset has {} identities, fewer than P={p}",
            by_id.len()
        ));
    }
    if k == 0 || (triplet_enabled && k < 2) {
        return config("K (bags per identity) must be >= 2 when the triplet loss is enabled");
    }
    let mut rng = rng::stream(cfg.seed, Stream::Batches, epoch);
    let mut order: Vec<u32> = by_id.keys().copied().collect();
    order.shuffle(&mut rng);
    let mut batches = Vec::new();
    for chunk in order.chunks(p) {
        let mut ids: Vec<u32> = chunk.to_vec();
        if ids.len() < p {
            let mut rest: Vec<u32> = order.iter().copied().filter(|i| !ids.contains(i)).collect();
            rest.shuffle(&mut rng);
            ids.extend(rest.into_iter().take(p - chunk.len()));
        }
        let mut bags = Vec::with_capacity(p * k);
        let mut labels = Vec::with_capacity(p * k);
        for id in ids {
            let pool = &by_id[&id];
            let mut idx: Vec<usize> = (0..pool.len()).collect();
            idx.shuffle(&mut rng);
            let picks: Vec<usize> = if pool.len() >= k {
                idx.into_iter().take(k).collect()
            } else {
                let mut picks = idx;
                while picks.len() < k {
                    picks.push(rng.gen_range(0..pool.len()));
                }
                picks
            };
            for i in picks {
                bags.push(pool[i].clone());
                labels.push(id);
            }
        }
        batches.push(BatchSpec { bags, labels });
    }
    Ok(batches)
}

/// Draws an N-frame bag from an identity's views pool.
///
/// Cameras are visited round-robin in an order shuffled per draw; within a
/// camera frames are drawn uniformly without replacement until the camera is
/// exhausted, then with replacement. The boolean is `true` when the identity
/// has a single camera and the bag degrades to a one-view bag.
pub fn sample_view_bag(
    dataset: &Dataset,
    pool: &SetBag,
    n: usize,
    rng: &mut Rng,
) -> Result<(SetBag, bool)> {
    if pool.is_empty() {
        return argument("view pool is empty");
    }
    if n == 0 {
        return argument("view bag size must be >= 1");
    }
    let mut by_camera: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for &m in &pool.members {
        by_camera.entry(dataset.samples()[m].camera).or_default().push(m);
    }
    let mut cameras: Vec<Vec<usize>> = by_camera.into_values().collect();
    cameras.shuffle(rng);
    for frames in &mut cameras {
        frames.shuffle(rng);
    }
    let mut cursor = alloc::vec![0usize; cameras.len()];
    let mut members = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % cameras.len();
        let frames = &cameras[c];
        let m = if cursor[c] < frames.len() {
            cursor[c] += 1;
            frames[cursor[c] - 1]
        } else {
            frames[rng.gen_range(0..frames.len())]
        };
        members.push(m);
    }
    Ok((
        SetBag {
            members,
            identity: pool.identity,
            mode: BagMode::Views,
        },
        cameras.len() == 1,
    ))
}

/// Uniformly picks `m` distinct positions of `bag` without replacement.
pub fn subsample_bag(bag: &SetBag, m: usize, rng: &mut Rng) -> Result<SetBag> {
    if m == 0 || m > bag.len() {
        return argument(format!(
            "subsample size {m} must lie in 1..={}",
            bag.len()
        ));
    }
    let mut positions: Vec<usize> = (0..bag.len()).collect();
    positions.shuffle(rng);
    positions.truncate(m);
    Ok(SetBag {
        members: positions.into_iter().map(|p| bag.members[p]).collect(),
        identity: bag.identity,
        mode: bag.mode,
    })
}

/// One distillation item: the teacher's N-frame bag and the student's M-frame subset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistillItem {
    pub teacher: SetBag,
    pub student: SetBag,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistillBatch {
    pub items: Vec<DistillItem>,
    pub labels: Vec<u32>,
    /// Teacher bags that could only see a single camera.
    pub single_view_bags: usize,
}

/// Distillation batches for one epoch. The P×K identity layout comes from
/// [`pk_batches`]; every slot is then replaced by a teacher bag from the
/// configured source and a student subset of it.
pub fn distill_batches(
    dataset: &Dataset,
    cfg: &SamplerConfig,
    epoch: u64,
    triplet_enabled: bool,
) -> Result<Vec<DistillBatch>> {
    cfg.validate(triplet_enabled)?;
    let layout = pk_batches(dataset, cfg, epoch, triplet_enabled)?;
    let views: BTreeMap<u32, SetBag> = group_sets(dataset, BagMode::Views)?
        .into_iter()
        .map(|b| (b.identity, b))
        .collect();
    let mut rng = rng::stream(cfg.seed, Stream::ViewBags, epoch);
    let mut out = Vec::with_capacity(layout.len());
    for batch in layout {
        let mut items = Vec::with_capacity(batch.bags.len());
        let mut single_view_bags = 0;
        for tracklet in &batch.bags {
            let teacher = match cfg.distill_source {
                DistillSource::Views => {
                    let (bag, degraded) =
                        sample_view_bag(dataset, &views[&tracklet.identity], cfg.teacher_frames, &mut rng)?;
                    single_view_bags += degraded as usize;
                    bag
                }
                DistillSource::Tracklet => {
                    let frames = equally_spaced_frames(tracklet.len(), cfg.teacher_frames)?;
                    SetBag {
                        members: frames.into_iter().map(|f| tracklet.members[f]).collect(),
                        identity: tracklet.identity,
                        mode: BagMode::Tracklet,
                    }
                }
            };
            let student = subsample_bag(&teacher, cfg.student_frames, &mut rng)?;
            items.push(DistillItem { teacher, student });
        }
        out.push(DistillBatch {
            items,
            labels: batch.labels,
            single_view_bags,
        });
    }
    Ok(out)
}
