//! Dataset representation, manifest records, set grouping and the
//! deterministic synthetic renderer.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{argument, Error, Result};
use crate::rng::{hash_words, unit};

/// One image record.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sample {
    pub path: String,
    pub identity: u32,
    pub camera: u32,
    pub tracklet: u32,
    pub frame: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Query,
    Gallery,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Query => "query",
            Split::Gallery => "gallery",
        }
    }

    /// Manifest file name for this split inside a dataset root.
    pub fn manifest_name(self) -> &'static str {
        match self {
            Split::Train => "train.manifest",
            Split::Query => "query.manifest",
            Split::Gallery => "gallery.manifest",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A validated split. Immutable after construction.
///
/// For the train split identities are re-indexed densely to `0..class_count`
/// and the original ids are kept in a side table. Query and gallery splits
/// keep their original ids so that relevance is decided on the same labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    split: Split,
    class_count: usize,
    original_ids: Vec<u32>,
}

impl Dataset {
    /// Validates the samples and builds a dataset.
    pub fn new(mut samples: Vec<Sample>, split: Split) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut seen = BTreeSet::new();
        let mut owner: BTreeMap<u32, (u32, u32)> = BTreeMap::new();
        for s in &samples {
            if !seen.insert((s.tracklet, s.frame)) {
                return Err(Error::Integrity(format!(
                    "duplicate (tracklet={}, frame={})",
                    s.tracklet, s.frame
                )));
            }
            let prev = *owner.entry(s.tracklet).or_insert((s.identity, s.camera));
            if prev != (s.identity, s.camera) {
                return Err(Error::Integrity(format!(
                    "tracklet {} mixes identity/camera ({},{}) and ({},{})",
                    s.tracklet, prev.0, prev.1, s.identity, s.camera
                )));
            }
        }
        let distinct: BTreeSet<u32> = samples.iter().map(|s| s.identity).collect();
        let original_ids: Vec<u32> = distinct.into_iter().collect();
        if split == Split::Train {
            let dense: BTreeMap<u32, u32> = original_ids
                .iter()
                .enumerate()
                .map(|(i, &id)| (id, i as u32))
                .collect();
            for s in &mut samples {
                s.identity = dense[&s.identity];
            }
        }
        Ok(Self {
            class_count: original_ids.len(),
            samples,
            split,
            original_ids,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn split(&self) -> Split {
        self.split
    }

    /// Number of distinct identities in this split.
    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Maps a (possibly re-indexed) identity back to the id in the manifest.
    pub fn original_identity(&self, identity: u32) -> u32 {
        match self.split {
            Split::Train => self.original_ids[identity as usize],
            _ => identity,
        }
    }

    pub fn identities(&self) -> BTreeSet<u32> {
        self.samples.iter().map(|s| s.identity).collect()
    }

    pub fn cameras(&self) -> BTreeSet<u32> {
        self.samples.iter().map(|s| s.camera).collect()
    }

    /// Sample indices of every tracklet, ordered by frame, keyed by tracklet id.
    pub fn tracklets(&self) -> BTreeMap<u32, Vec<usize>> {
        let mut map: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, s) in self.samples.iter().enumerate() {
            map.entry(s.tracklet).or_default().push(i);
        }
        for members in map.values_mut() {
            members.sort_by_key(|&i| self.samples[i].frame);
        }
        map
    }

    /// Checks that every query identity appears in the gallery.
    pub fn check_query_gallery(query: &Dataset, gallery: &Dataset) -> Result<()> {
        let g = gallery.identities();
        if let Some(missing) = query.identities().into_iter().find(|id| !g.contains(id)) {
            return Err(Error::Integrity(format!(
                "query identity {missing} is absent from the gallery"
            )));
        }
        Ok(())
    }
}

/// How samples are grouped into sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BagMode {
    /// Frames of a single tracklet (one camera).
    Tracklet,
    /// Frames of one identity across its cameras.
    Views,
}

/// An ordered set of samples treated as one entity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SetBag {
    /// Indices into the owning dataset's samples.
    pub members: Vec<usize>,
    pub identity: u32,
    pub mode: BagMode,
}

impl SetBag {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Groups a dataset into bags.
///
/// Tracklet bags come out ordered by tracklet id with members in frame order.
/// Views bags come out one per identity, members ordered by
/// (camera, tracklet, frame) so per-camera runs are contiguous.
pub fn group_sets(dataset: &Dataset, mode: BagMode) -> Result<Vec<SetBag>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let samples = dataset.samples();
    Ok(match mode {
        BagMode::Tracklet => dataset
            .tracklets()
            .into_values()
            .map(|members| SetBag {
                identity: samples[members[0]].identity,
                members,
                mode,
            })
            .collect(),
        BagMode::Views => {
            let mut by_id: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
            for (i, s) in samples.iter().enumerate() {
                by_id.entry(s.identity).or_default().push(i);
            }
            by_id
                .into_iter()
                .map(|(identity, mut members)| {
                    members.sort_by_key(|&i| {
                        let s = &samples[i];
                        (s.camera, s.tracklet, s.frame)
                    });
                    SetBag {
                        members,
                        identity,
                        mode,
                    }
                })
                .collect()
        }
    })
}

const FIELDS: [&str; 5] = ["path", "identity", "camera", "tracklet", "frame"];

/// Parses manifest text.
///
/// Each non-empty, non-`#` line is one record, either as named tokens
/// (`path=a.png identity=0 camera=1 tracklet=2 frame=0`, any order) or as the
/// five bare fields in the order `path identity camera tracklet frame`.
pub fn parse_manifest(text: &str, split: Split) -> Result<Dataset> {
    let mut samples = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        samples.push(parse_record(line, lineno + 1)?);
    }
    Dataset::new(samples, split)
}

fn parse_record(line: &str, lineno: usize) -> Result<Sample> {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    let mut values: [Option<&str>; 5] = [None; 5];
    let format_err = |message: String| Error::Format {
        line: lineno,
        message,
    };
    if tokens.iter().any(|t| t.contains('=')) {
        for tok in &tokens {
            let (key, value) = tok
                .split_once('=')
                .ok_or_else(|| format_err(format!("token `{tok}` is not key=value")))?;
            let slot = FIELDS
                .iter()
                .position(|f| *f == key)
                .ok_or_else(|| format_err(format!("unknown field `{key}`")))?;
            if values[slot].replace(value).is_some() {
                return Err(format_err(format!("field `{key}` given twice")));
            }
        }
    } else {
        if tokens.len() > FIELDS.len() {
            return Err(format_err(format!(
                "expected 5 fields, found {}",
                tokens.len()
            )));
        }
        for (slot, tok) in values.iter_mut().zip(&tokens) {
            *slot = Some(tok);
        }
    }
    let field = |slot: usize| -> Result<&str> {
        values[slot].ok_or_else(|| format_err(format!("missing field `{}`", FIELDS[slot])))
    };
    let path = field(0)?.to_string();
    let numeric = |slot: usize| -> Result<u32> {
        let text = field(slot)?;
        text.parse::<u32>().map_err(|_| Error::Format {
            line: lineno,
            message: format!("field `{}` is not a non-negative integer: `{text}`", FIELDS[slot]),
        })
    };
    Ok(Sample {
        identity: numeric(1)?,
        camera: numeric(2)?,
        tracklet: numeric(3)?,
        frame: numeric(4)?,
        path,
    })
}

/// Serializes samples as manifest text (named-field form).
pub fn format_manifest(samples: &[Sample]) -> String {
    let mut out = String::from("# path identity camera tracklet frame\n");
    for s in samples {
        out.push_str(&format!(
            "path={} identity={} camera={} tracklet={} frame={}\n",
            s.path, s.identity, s.camera, s.tracklet, s.frame
        ));
    }
    out
}

/// Parameters of the synthetic dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_identities: u32,
    pub num_cameras: u32,
    pub tracklets_per_id_camera: u32,
    pub frames_per_tracklet: u32,
    pub image_size: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_identities: 30,
            num_cameras: 4,
            tracklets_per_id_camera: 2,
            frames_per_tracklet: 6,
            image_size: 32,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_identities == 0
            || self.num_cameras == 0
            || self.tracklets_per_id_camera == 0
            || self.frames_per_tracklet == 0
        {
            return argument("synthetic counts must all be >= 1");
        }
        if self.image_size < 8 {
            return argument("synthetic image_size must be >= 8");
        }
        Ok(())
    }

    pub fn total_images(&self) -> usize {
        (self.num_identities
            * self.num_cameras
            * self.tracklets_per_id_camera
            * self.frames_per_tracklet) as usize
    }

    fn tracklet_id(&self, identity: u32, camera: u32, t: u32) -> u32 {
        (identity * self.num_cameras + camera) * self.tracklets_per_id_camera + t
    }
}

/// Every synthetic sample, already assigned to its split.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SyntheticLayout {
    pub train: Vec<Sample>,
    pub query: Vec<Sample>,
    pub gallery: Vec<Sample>,
}

impl SyntheticLayout {
    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Query => &self.query,
            Split::Gallery => &self.gallery,
        }
    }

    pub fn all(&self) -> impl Iterator<Item = &Sample> {
        self.train.iter().chain(&self.query).chain(&self.gallery)
    }
}

/// Enumerates the synthetic samples and applies the fixed split rule.
///
/// Per identity: one tracklet per camera goes to the gallery, then one
/// remaining tracklet (from a seeded camera choice) goes to the query split,
/// and everything left goes to train.
pub fn synthetic_layout(cfg: &SynthConfig) -> Result<SyntheticLayout> {
    cfg.validate()?;
    let mut layout = SyntheticLayout::default();
    let tpc = cfg.tracklets_per_id_camera;
    for id in 0..cfg.num_identities {
        let pick = |camera: u32, salt: u64| -> u32 {
            let h = hash_words(&[cfg.seed, 0x5311, id as u64, camera as u64, salt]);
            (h % tpc as u64) as u32
        };
        let gallery_pick: Vec<u32> = (0..cfg.num_cameras).map(|c| pick(c, 0)).collect();
        let leftovers: Vec<(u32, u32)> = (0..cfg.num_cameras)
            .flat_map(|c| (0..tpc).map(move |t| (c, t)))
            .filter(|&(c, t)| gallery_pick[c as usize] != t)
            .collect();
        let query_pick = if leftovers.is_empty() {
            None
        } else {
            let h = hash_words(&[cfg.seed, 0x9e17, id as u64]);
            Some(leftovers[(h % leftovers.len() as u64) as usize])
        };
        for camera in 0..cfg.num_cameras {
            for t in 0..tpc {
                let tracklet = cfg.tracklet_id(id, camera, t);
                let dest = if gallery_pick[camera as usize] == t {
                    &mut layout.gallery
                } else if query_pick == Some((camera, t)) {
                    &mut layout.query
                } else {
                    &mut layout.train
                };
                for frame in 0..cfg.frames_per_tracklet {
                    dest.push(Sample {
                        path: format!(
                            "images/id{id:04}_c{camera:02}_t{tracklet:05}_f{frame:03}.png"
                        ),
                        identity: id,
                        camera,
                        tracklet,
                        frame,
                    });
                }
            }
        }
    }
    Ok(layout)
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h - libm::floor(h)) * 6.0;
    let sector = libm::floor(h6) as i32 % 6;
    let f = h6 - libm::floor(h6);
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

struct IdentityLook {
    upper: [f64; 3],
    lower: [f64; 3],
    shape: u64,
    stripe_freq: f64,
    stripe_phase: f64,
    width: f64,
    height: f64,
}

impl IdentityLook {
    fn new(seed: u64, identity: u32) -> Self {
        let h = |k: u64| unit(hash_words(&[seed, 0x1d, identity as u64, k]));
        Self {
            upper: hsv(h(0), 0.45 + 0.5 * h(1), 0.45 + 0.5 * h(2)),
            lower: hsv(h(3), 0.3 + 0.6 * h(4), 0.3 + 0.6 * h(5)),
            shape: hash_words(&[seed, 0x1d, identity as u64, 6]) % 3,
            stripe_freq: 1.0 + libm::floor(4.0 * h(7)),
            stripe_phase: h(8),
            width: 0.16 + 0.1 * h(9),
            height: 0.62 + 0.18 * h(10),
        }
    }
}

struct CameraLook {
    bg: [f64; 3],
    bg_alt: [f64; 3],
    angle: f64,
    freq: f64,
    tint: [f64; 3],
    scale: f64,
}

impl CameraLook {
    fn new(seed: u64, camera: u32) -> Self {
        let h = |k: u64| unit(hash_words(&[seed, 0xca, camera as u64, k]));
        let hue = h(0);
        Self {
            bg: hsv(hue, 0.2 + 0.5 * h(1), 0.3 + 0.5 * h(2)),
            bg_alt: hsv(hue + 0.15 * (h(3) - 0.5), 0.2 + 0.5 * h(4), 0.3 + 0.5 * h(5)),
            angle: core::f64::consts::PI * h(6),
            freq: 2.0 + 4.0 * h(7),
            tint: [
                0.75 + 0.5 * h(8),
                0.75 + 0.5 * h(9),
                0.75 + 0.5 * h(10),
            ],
            scale: 0.85 + 0.25 * h(11),
        }
    }
}

/// Renders one synthetic frame as interleaved RGB bytes (row-major, `size²·3`).
///
/// The figure is a function of the identity, the background, global tint and
/// figure scale are functions of the camera, and translation, brightness and
/// pixel noise are functions of (tracklet, frame, seed).
pub fn render_frame(cfg: &SynthConfig, sample: &Sample) -> Vec<u8> {
    let size = cfg.image_size as usize;
    let seed = cfg.seed;
    let look = IdentityLook::new(seed, sample.identity);
    let cam = CameraLook::new(seed, sample.camera);
    let jit = |k: u64| {
        unit(hash_words(&[
            seed,
            0x7e,
            sample.tracklet as u64,
            sample.frame as u64,
            k,
        ]))
    };
    // A tracklet drifts slowly: a per-tracklet offset plus a small per-frame wobble.
    let track = |k: u64| unit(hash_words(&[seed, 0x7f, sample.tracklet as u64, k]));
    let dx = 0.08 * (track(0) - 0.5) + 0.04 * (jit(0) - 0.5);
    let dy = 0.06 * (track(1) - 0.5) + 0.03 * (jit(1) - 0.5);
    let brightness = 0.9 + 0.2 * jit(2);
    let mirrored = track(2) < 0.5;

    let (ca, sa) = (libm::cos(cam.angle), libm::sin(cam.angle));
    let width = look.width * cam.scale;
    let height = look.height * cam.scale;
    let cx = 0.5 + dx;
    let top = 0.5 + dy - height / 2.0;
    let head_r = width * 0.55;
    let body_top = top + 2.0 * head_r;
    let waist = body_top + (top + height - body_top) * 0.5;
    let bottom = top + height;

    let mut out = vec![0u8; size * size * 3];
    for y in 0..size {
        for x in 0..size {
            let u = (x as f64 + 0.5) / size as f64;
            let v = (y as f64 + 0.5) / size as f64;
            let wave = libm::sin(2.0 * core::f64::consts::PI * cam.freq * (u * ca + v * sa));
            let mix = 0.5 + 0.5 * wave;
            let mut rgb = [0.0; 3];
            for c in 0..3 {
                rgb[c] = cam.bg[c] * (1.0 - mix) + cam.bg_alt[c] * mix;
            }
            let lu = if mirrored { 1.0 - u } else { u };
            let rx = (lu - cx) / width;
            let inside_torso = |vv: f64| -> bool {
                let t = (vv - body_top) / (bottom - body_top);
                match look.shape {
                    0 => libm::fabs(rx) <= 1.0,
                    1 => libm::fabs(rx) <= 0.7 + 0.5 * t,
                    _ => {
                        let ry = 2.0 * t - 1.0;
                        rx * rx + ry * ry <= 1.0
                    }
                }
            };
            let hx = (lu - cx) / head_r;
            let hy = (v - (top + head_r)) / head_r;
            if hx * hx + hy * hy <= 1.0 {
                rgb = [0.85, 0.7, 0.55];
            } else if v >= body_top && v <= bottom && inside_torso(v) {
                if v < waist {
                    let stripe = libm::sin(
                        2.0 * core::f64::consts::PI
                            * (look.stripe_freq * (v - body_top) / (waist - body_top)
                                + look.stripe_phase),
                    );
                    let m = 0.75 + 0.25 * stripe;
                    for c in 0..3 {
                        rgb[c] = look.upper[c] * m;
                    }
                } else {
                    rgb = look.lower;
                }
            }
            let base = (y * size + x) * 3;
            for c in 0..3 {
                let noise = 0.06 * (jit(16 + (base + c) as u64) - 0.5);
                let value = rgb[c] * cam.tint[c] * brightness + noise;
                out[base + c] = (value.clamp(0.0, 1.0) * 255.0 + 0.5) as u8;
            }
        }
    }
    out
}
