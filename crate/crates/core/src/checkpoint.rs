//! Binary checkpoint format.
//!
//! Little-endian throughout. Floats are stored by bit pattern, so decoding
//! an encoded checkpoint reproduces every tensor exactly.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{InputNorm, ModelBundle};
use crate::nn::{Adam, AdamConfig};
use crate::trainer::{EpochRecord, TrainState};

const MAGIC: &[u8; 8] = b"VKDCKPT\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageTag {
    Teacher,
    Student,
}

impl StageTag {
    pub fn name(self) -> &'static str {
        match self {
            StageTag::Teacher => "teacher",
            StageTag::Student => "student",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub stage: StageTag,
    pub config_hash: String,
    /// Hash of the teacher a student was distilled from.
    pub teacher_hash: Option<String>,
    pub state: TrainState,
}

impl Checkpoint {
    pub fn model(&self) -> &ModelBundle {
        &self.state.model
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.u32(v.to_bits());
    }
    fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn floats(&mut self, v: &[f32]) {
        self.u64(v.len() as u64);
        for &x in v {
            self.f32(x);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Checkpoint(format!("truncated at byte {}", self.pos))),
        }
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("size overflow".into()))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_bits(self.u32()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid utf-8 string".into()))
    }
    fn floats(&mut self) -> Result<Vec<f32>> {
        let n = self.usize()?;
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_bits(u32::from_le_bytes(c.try_into().unwrap())))
            .collect())
    }
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let model = &ckpt.state.model;
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.u8(match ckpt.stage {
        StageTag::Teacher => 0,
        StageTag::Student => 1,
    });
    w.str(&ckpt.config_hash);
    match &ckpt.teacher_hash {
        Some(h) => {
            w.u8(1);
            w.str(h);
        }
        None => w.u8(0),
    }
    w.str(&model.arch_id);
    w.u64(model.embed_dim as u64);
    w.u64(model.class_count as u64);
    w.u64(model.image_size as u64);
    for &v in model.input_norm.mean.iter().chain(&model.input_norm.std) {
        w.f32(v);
    }
    let tensors = model.tensors();
    w.u32(tensors.len() as u32);
    for (name, t) in tensors {
        w.str(&name);
        w.floats(t);
    }
    let opt = &ckpt.state.optimizer;
    w.f32(opt.config.beta1);
    w.f32(opt.config.beta2);
    w.f32(opt.config.eps);
    w.u64(opt.step);
    w.u32(opt.first.len() as u32);
    for (m, v) in opt.first.iter().zip(&opt.second) {
        w.floats(m);
        w.floats(v);
    }
    w.u64(ckpt.state.epochs_done);
    w.u32(ckpt.state.log.len() as u32);
    for r in &ckpt.state.log {
        w.u64(r.epoch);
        for v in [r.lr, r.ce, r.tr, r.kd, r.dp, r.total] {
            w.f64(v);
        }
        w.u64(r.single_view_bags);
    }
    w.0
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let stage = match r.u8()? {
        0 => StageTag::Teacher,
        1 => StageTag::Student,
        t => return Err(Error::Checkpoint(format!("unknown stage tag {t}"))),
    };
    let config_hash = r.str()?;
    let teacher_hash = match r.u8()? {
        0 => None,
        _ => Some(r.str()?),
    };
    let arch = r.str()?;
    let embed_dim = r.usize()?;
    let class_count = r.usize()?;
    let image_size = r.usize()?;
    let mut norm = InputNorm::default();
    for v in norm.mean.iter_mut().chain(norm.std.iter_mut()) {
        *v = r.f32()?;
    }
    let mut model = ModelBundle::new(&arch, embed_dim, class_count, image_size, norm, 0)
        .map_err(|e| Error::Checkpoint(format!("bad model header: {e}")))?;
    let count = r.u32()? as usize;
    let mut slots = model.tensors_mut();
    if count != slots.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {count}",
            slots.len()
        )));
    }
    for (name, slot) in slots.iter_mut() {
        let stored = r.str()?;
        if &stored != name {
            return Err(Error::Checkpoint(format!("expected tensor {name}, found {stored}")));
        }
        let data = r.floats()?;
        if data.len() != slot.len() {
            return Err(Error::Checkpoint(format!(
                "tensor {name} has {} values, expected {}",
                data.len(),
                slot.len()
            )));
        }
        **slot = data;
    }
    drop(slots);
    let config = AdamConfig {
        beta1: r.f32()?,
        beta2: r.f32()?,
        eps: r.f32()?,
    };
    let mut optimizer = Adam::new(config);
    optimizer.step = r.u64()?;
    let moments = r.u32()? as usize;
    for _ in 0..moments {
        optimizer.first.push(r.floats()?);
        optimizer.second.push(r.floats()?);
    }
    let epochs_done = r.u64()?;
    let n_log = r.u32()? as usize;
    let mut log = Vec::with_capacity(n_log.min(1 << 16));
    for _ in 0..n_log {
        log.push(EpochRecord {
            epoch: r.u64()?,
            lr: r.f64()?,
            ce: r.f64()?,
            tr: r.f64()?,
            kd: r.f64()?,
            dp: r.f64()?,
            total: r.f64()?,
            single_view_bags: r.u64()?,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after checkpoint".into()));
    }
    Ok(Checkpoint {
        stage,
        config_hash,
        teacher_hash,
        state: TrainState {
            model,
            optimizer,
            epochs_done,
            log,
        },
    })
}
