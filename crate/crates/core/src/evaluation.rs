//! Feature extraction, cross-camera ranking and retrieval metrics.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datamodel::{Dataset, Split};
use crate::error::{argument, Error, Result};
use crate::images::ImageBank;
use crate::losses::Metric;
use crate::model::{aggregate_runs, ModelBundle, NormMode};
use crate::sampling::equally_spaced_frames;

/// Query-to-gallery matching setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    I2I,
    I2V,
    V2V,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::I2I, Protocol::I2V, Protocol::V2V];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::I2I => "i2i",
            Protocol::I2V => "i2v",
            Protocol::V2V => "v2v",
        }
    }

    fn is_image(self, side: Side) -> bool {
        match side {
            Side::Query => self != Protocol::V2V,
            Side::Gallery => self == Protocol::I2I,
        }
    }
}

impl FromStr for Protocol {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "i2i" => Ok(Protocol::I2I),
            "i2v" => Ok(Protocol::I2V),
            "v2v" => Ok(Protocol::V2V),
            _ => Err(Error::Config(format!("unknown protocol '{s}' (expected i2i, i2v or v2v)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Query,
    Gallery,
}

/// Which gallery entries are ignored for a query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum ExclusionRule {
    /// Drop gallery entries sharing both identity and camera with the query.
    #[default]
    #[serde(rename = "standard")]
    Standard,
    /// Drop every gallery entry from the query's camera.
    #[serde(rename = "all-same-camera")]
    AllSameCamera,
}

impl ExclusionRule {
    pub fn name(self) -> &'static str {
        match self {
            ExclusionRule::Standard => "standard",
            ExclusionRule::AllSameCamera => "all-same-camera",
        }
    }

    fn excludes(self, query: &FeatureRow, gallery: &FeatureRow) -> bool {
        match self {
            ExclusionRule::Standard => query.camera == gallery.camera && query.identity == gallery.identity,
            ExclusionRule::AllSameCamera => query.camera == gallery.camera,
        }
    }
}

impl FromStr for ExclusionRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(ExclusionRule::Standard),
            "all-same-camera" => Ok(ExclusionRule::AllSameCamera),
            _ => Err(Error::Config(format!(
                "unknown exclusion rule '{s}' (expected standard or all-same-camera)"
            ))),
        }
    }
}

/// Frames used per gallery tracklet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GalleryFrames {
    #[default]
    All,
    /// Equally spaced subset of this many frames.
    Count(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntityKind {
    Image,
    Tracklet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    /// Tracklet id for tracklet-level tables and for first-frame image
    /// tables; sample index for per-image tables.
    pub entity: u64,
    pub identity: u32,
    pub camera: u32,
    pub feature: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub kind: EntityKind,
    pub rows: Vec<FeatureRow>,
}

impl FeatureTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, |r| r.feature.len())
    }
}

/// A dataset split together with its decoded images.
#[derive(Debug, Clone, Copy)]
pub struct ImageSet<'a> {
    pub dataset: &'a Dataset,
    pub images: &'a ImageBank,
}

const CHUNK: usize = 256;

/// Inference features of sets given as member lists, embedded in chunks.
pub fn embed_sets(model: &ModelBundle, images: &ImageBank, sets: &[Vec<usize>]) -> Result<Vec<Vec<f32>>> {
    let d = model.embed_dim;
    let mut out = Vec::with_capacity(sets.len());
    let mut start = 0;
    while start < sets.len() {
        let mut end = start;
        let mut count = 0;
        while end < sets.len() && (count == 0 || count + sets[end].len() <= CHUNK) {
            count += sets[end].len();
            end += 1;
        }
        let members: Vec<usize> = sets[start..end].iter().flatten().copied().collect();
        let sizes: Vec<usize> = sets[start..end].iter().map(Vec::len).collect();
        if sizes.contains(&0) {
            return argument("cannot embed an empty set");
        }
        let raw = model.embed_images(&images.gather(&members), members.len())?;
        let agg = aggregate_runs(&raw, d, &sizes);
        let head = model.head_forward(&agg, sizes.len(), NormMode::Eval)?;
        out.extend(head.inference.chunks_exact(d).map(<[f32]>::to_vec));
        start = end;
    }
    Ok(out)
}

fn check_side(dataset: &Dataset, side: Side) -> Result<()> {
    let expected = match side {
        Side::Query => Split::Query,
        Side::Gallery => Split::Gallery,
    };
    if dataset.split() != expected {
        return argument(format!(
            "expected the {} split, got {}",
            expected.name(),
            dataset.split().name()
        ));
    }
    if dataset.is_empty() {
        return argument("split is empty");
    }
    Ok(())
}

/// One row per tracklet: the first frame for image entities, otherwise the
/// average over all frames or over `gallery_frames` equally spaced ones.
pub fn extract_features(
    model: &ModelBundle,
    set: ImageSet<'_>,
    side: Side,
    protocol: Protocol,
    gallery_frames: GalleryFrames,
) -> Result<FeatureTable> {
    check_side(set.dataset, side)?;
    let image = protocol.is_image(side);
    let samples = set.dataset.samples();
    let mut meta = Vec::new();
    let mut sets = Vec::new();
    for (tracklet, members) in set.dataset.tracklets() {
        let chosen = if image {
            vec![members[0]]
        } else {
            match (side, gallery_frames) {
                (Side::Gallery, GalleryFrames::Count(k)) => equally_spaced_frames(members.len(), k)?
                    .into_iter()
                    .map(|p| members[p])
                    .collect(),
                _ => members.clone(),
            }
        };
        let s = &samples[members[0]];
        meta.push((tracklet as u64, s.identity, s.camera));
        sets.push(chosen);
    }
    let features = embed_sets(model, set.images, &sets)?;
    Ok(FeatureTable {
        kind: if image { EntityKind::Image } else { EntityKind::Tracklet },
        rows: meta
            .into_iter()
            .zip(features)
            .map(|((entity, identity, camera), feature)| FeatureRow {
                entity,
                identity,
                camera,
                feature,
            })
            .collect(),
    })
}

/// One row per sample (entity = sample index).
pub fn extract_image_features(model: &ModelBundle, set: ImageSet<'_>) -> Result<FeatureTable> {
    if set.dataset.is_empty() {
        return argument("split is empty");
    }
    let sets: Vec<Vec<usize>> = (0..set.dataset.len()).map(|i| vec![i]).collect();
    let features = embed_sets(model, set.images, &sets)?;
    Ok(FeatureTable {
        kind: EntityKind::Image,
        rows: set
            .dataset
            .samples()
            .iter()
            .zip(features)
            .enumerate()
            .map(|(i, (s, feature))| FeatureRow {
                entity: i as u64,
                identity: s.identity,
                camera: s.camera,
                feature,
            })
            .collect(),
    })
}

pub fn distance(a: &[f32], b: &[f32], metric: Metric) -> f64 {
    match metric {
        Metric::Euclidean => libm::sqrt(
            a.iter()
                .zip(b)
                .map(|(&x, &y)| {
                    let d = x as f64 - y as f64;
                    d * d
                })
                .sum(),
        ),
        Metric::Cosine => {
            let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
            for (&x, &y) in a.iter().zip(b) {
                let (x, y) = (x as f64, y as f64);
                dot += x * y;
                na += x * x;
                nb += y * y;
            }
            1.0 - dot / (libm::sqrt(na * nb)).max(1e-12)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedQuery {
    pub entity: u64,
    /// Gallery entities that survived the exclusion rule, nearest first.
    pub gallery: Vec<u64>,
    pub relevance: Vec<bool>,
}

impl RankedQuery {
    /// 1-based rank of the first relevant entry.
    pub fn first_relevant(&self) -> Option<usize> {
        self.relevance.iter().position(|&r| r).map(|p| p + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub queries: Vec<RankedQuery>,
    /// Queries left without any relevant gallery entry.
    pub dropped: usize,
}

/// Ranks the gallery for every query. Ties in distance are broken by
/// ascending gallery entity id.
pub fn rank_queries(
    query: &FeatureTable,
    gallery: &FeatureTable,
    metric: Metric,
    rule: ExclusionRule,
) -> Result<Ranking> {
    if gallery.is_empty() {
        return argument("gallery is empty");
    }
    let dim = gallery.dim();
    let rows = query.rows.iter().chain(&gallery.rows);
    for r in rows {
        if r.feature.len() != dim {
            return argument("feature dimensions differ");
        }
        if r.feature.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("entity {} has a non-finite feature", r.entity)));
        }
    }
    let mut queries = Vec::with_capacity(query.len());
    let mut dropped = 0;
    for q in &query.rows {
        let mut scored: Vec<(f64, u64, bool)> = gallery
            .rows
            .iter()
            .filter(|g| !rule.excludes(q, g))
            .map(|g| (distance(&q.feature, &g.feature, metric), g.entity, g.identity == q.identity))
            .collect();
        if !scored.iter().any(|s| s.2) {
            dropped += 1;
            continue;
        }
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        queries.push(RankedQuery {
            entity: q.entity,
            gallery: scored.iter().map(|s| s.1).collect(),
            relevance: scored.iter().map(|s| s.2).collect(),
        });
    }
    Ok(Ranking { queries, dropped })
}

/// Mean of precision@k over the relevant positions k.
pub fn average_precision(relevance: &[bool]) -> Result<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &r) in relevance.iter().enumerate() {
        if r {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    if hits == 0 {
        return argument("average precision needs at least one relevant item");
    }
    Ok(sum / hits as f64)
}

/// `cmc[k-1]` = fraction of queries whose first relevant rank is ≤ k.
pub fn cmc_curve(first_ranks: &[usize], max_rank: usize) -> Result<Vec<f64>> {
    if first_ranks.contains(&0) {
        return argument("ranks are 1-based");
    }
    let mut counts = vec![0usize; max_rank];
    for &r in first_ranks {
        if r <= max_rank {
            counts[r - 1] += 1;
        }
    }
    let n = first_ranks.len().max(1) as f64;
    let mut acc = 0;
    Ok(counts
        .into_iter()
        .map(|c| {
            acc += c;
            acc as f64 / n
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub metric: Metric,
    pub exclusion: ExclusionRule,
    pub gallery_frames: GalleryFrames,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            metric: Metric::Euclidean,
            exclusion: ExclusionRule::Standard,
            gallery_frames: GalleryFrames::All,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub exclusion_rule: ExclusionRule,
    /// `cmc[k-1]` for every rank up to the gallery size.
    pub cmc: Vec<f64>,
    pub map: f64,
    pub num_queries: usize,
    pub dropped: usize,
}

impl EvalReport {
    /// CMC at rank `k`; ranks past the gallery size keep the last value.
    pub fn cmc_at(&self, k: usize) -> f64 {
        match self.cmc.len() {
            0 => 0.0,
            n => self.cmc[k.clamp(1, n) - 1],
        }
    }

    pub fn summary(&self) -> String {
        format!(
            "{} cmc1={:.4} cmc5={:.4} mAP={:.4} queries={} dropped={}",
            self.protocol.name(),
            self.cmc_at(1),
            self.cmc_at(5),
            self.map,
            self.num_queries,
            self.dropped
        )
    }
}

/// Ranking and metrics on precomputed tables.
pub fn evaluate_tables(
    query: &FeatureTable,
    gallery: &FeatureTable,
    protocol: Protocol,
    options: &EvalOptions,
) -> Result<EvalReport> {
    let ranking = rank_queries(query, gallery, options.metric, options.exclusion)?;
    let mut ap_sum = 0.0;
    let mut firsts = Vec::with_capacity(ranking.queries.len());
    for q in &ranking.queries {
        ap_sum += average_precision(&q.relevance)?;
        firsts.push(q.first_relevant().expect("kept queries have a relevant entry"));
    }
    let n = ranking.queries.len();
    Ok(EvalReport {
        protocol,
        exclusion_rule: options.exclusion,
        cmc: cmc_curve(&firsts, gallery.len())?,
        map: if n == 0 { 0.0 } else { ap_sum / n as f64 },
        num_queries: n,
        dropped: ranking.dropped,
    })
}

pub fn evaluate_protocol(
    model: &ModelBundle,
    query: ImageSet<'_>,
    gallery: ImageSet<'_>,
    protocol: Protocol,
    options: &EvalOptions,
) -> Result<EvalReport> {
    Dataset::check_query_gallery(query.dataset, gallery.dataset)?;
    let q = extract_features(model, query, Side::Query, protocol, GalleryFrames::All)?;
    let g = extract_features(model, gallery, Side::Gallery, protocol, options.gallery_frames)?;
    evaluate_tables(&q, &g, protocol, options)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub frames: usize,
    pub cmc1: f64,
    pub map: f64,
}

/// I2V evaluation with each gallery tracklet reduced to `sizes[i]` frames.
pub fn gallery_size_sweep(
    model: &ModelBundle,
    query: ImageSet<'_>,
    gallery: ImageSet<'_>,
    sizes: &[usize],
    options: &EvalOptions,
) -> Result<Vec<SweepRow>> {
    if sizes.contains(&0) {
        return argument("gallery sizes must be >= 1");
    }
    Dataset::check_query_gallery(query.dataset, gallery.dataset)?;
    let q = extract_features(model, query, Side::Query, Protocol::I2V, GalleryFrames::All)?;
    sizes
        .iter()
        .map(|&frames| {
            let g = extract_features(model, gallery, Side::Gallery, Protocol::I2V, GalleryFrames::Count(frames))?;
            let r = evaluate_tables(&q, &g, Protocol::I2V, options)?;
            Ok(SweepRow {
                frames,
                cmc1: r.cmc_at(1),
                map: r.map,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn row(entity: u64, identity: u32, camera: u32, feature: &[f32]) -> FeatureRow {
        FeatureRow {
            entity,
            identity,
            camera,
            feature: feature.to_vec(),
        }
    }

    fn table(rows: Vec<FeatureRow>) -> FeatureTable {
        FeatureTable {
            kind: EntityKind::Tracklet,
            rows,
        }
    }

    #[test]
    fn ap_examples() {
        assert_relative_eq!(average_precision(&[true, false, false]).unwrap(), 1.0);
        assert_relative_eq!(average_precision(&[true, false, true]).unwrap(), 0.8333333333333334, epsilon = 1e-12);
        assert_relative_eq!(average_precision(&[false, true]).unwrap(), 0.5);
        assert!(average_precision(&[false, false]).is_err());
    }

    #[test]
    fn cmc_examples() {
        assert_eq!(cmc_curve(&[2], 2).unwrap(), vec![0.0, 1.0]);
        assert_eq!(cmc_curve(&[1, 1, 1], 4).unwrap(), vec![1.0; 4]);
        assert_eq!(cmc_curve(&[1, 3], 3).unwrap(), vec![0.5, 0.5, 1.0]);
        assert!(cmc_curve(&[0], 3).is_err());
    }

    #[test]
    fn exclusion_rules_filter_as_documented() {
        let q = table(vec![row(0, 1, 1, &[0.0])]);
        let g = table(vec![row(10, 1, 1, &[0.0]), row(11, 1, 2, &[1.0]), row(12, 2, 1, &[2.0])]);
        let a = rank_queries(&q, &g, Metric::Euclidean, ExclusionRule::Standard).unwrap();
        assert_eq!(a.queries[0].gallery, vec![11, 12]);
        let b = rank_queries(&q, &g, Metric::Euclidean, ExclusionRule::AllSameCamera).unwrap();
        assert_eq!(b.queries[0].gallery, vec![11]);
        assert!("loose".parse::<ExclusionRule>().is_err());
    }

    #[test]
    fn queries_without_positives_are_dropped() {
        let q = table(vec![row(0, 1, 1, &[0.0]), row(1, 2, 2, &[0.0])]);
        let g = table(vec![row(10, 1, 1, &[0.0]), row(11, 2, 1, &[1.0])]);
        let r = rank_queries(&q, &g, Metric::Euclidean, ExclusionRule::AllSameCamera).unwrap();
        assert_eq!(r.dropped, 1);
        assert_eq!(r.queries.len(), 1);
        assert_eq!(r.queries[0].entity, 1);
        assert_eq!(r.queries[0].relevance, vec![false, true]);
    }

    #[test]
    fn ties_break_by_entity_regardless_of_row_order() {
        let q = table(vec![row(0, 1, 1, &[0.0])]);
        let g1 = table(vec![row(12, 2, 2, &[1.0]), row(11, 1, 2, &[1.0]), row(13, 1, 3, &[-1.0])]);
        let mut g2 = g1.clone();
        g2.rows.reverse();
        let a = rank_queries(&q, &g1, Metric::Euclidean, ExclusionRule::Standard).unwrap();
        let b = rank_queries(&q, &g2, Metric::Euclidean, ExclusionRule::Standard).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.queries[0].gallery, vec![11, 12, 13]);
    }

    #[test]
    fn separable_features_score_perfectly() {
        let q = table((0..5).map(|i| row(i, i as u32, 0, &[i as f32 * 10.0, 1.0])).collect());
        let g = table((0..5).map(|i| row(100 + i, i as u32, 1, &[i as f32 * 10.0, 0.0])).collect());
        let r = evaluate_tables(&q, &g, Protocol::V2V, &EvalOptions::default()).unwrap();
        assert_eq!(r.map, 1.0);
        assert_eq!(r.cmc_at(1), 1.0);
        assert_eq!(r.cmc_at(50), 1.0);
        assert_eq!(r.num_queries, 5);
    }

    #[test]
    fn cosine_distance_basics() {
        assert_relative_eq!(distance(&[1.0, 0.0], &[0.0, 2.0], Metric::Cosine), 1.0);
        assert_relative_eq!(distance(&[1.0, 1.0], &[2.0, 2.0], Metric::Cosine), 0.0, epsilon = 1e-12);
        assert_relative_eq!(distance(&[0.0, 3.0], &[4.0, 0.0], Metric::Euclidean), 5.0);
    }
}
