//! Stage 1 (teacher) and stage 2 (views distillation) training loops.
//!
//! Each epoch draws its batches, augmentation and view bags from streams
//! keyed by `(seed, epoch)`, so a run restored from a [`TrainState`] at an
//! epoch boundary continues exactly like an uninterrupted run.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datamodel::{Dataset, SetBag};
use crate::error::{config, Error, Result};
use crate::images::{Augmentation, ImageBank};
use crate::losses::{vkd_objective, LossBreakdown, LossConfig, ObjectiveInputs, TeacherTargets};
use crate::matrix::Matrix;
use crate::model::{
    aggregate_runs, aggregate_runs_backward, hex, init_student_from_teacher, InputNorm, ModelBundle,
    NormMode, DEFAULT_EMBED_DIM,
};
use crate::nn::{Adam, AdamConfig};
use crate::rng::{self, Stream};
use crate::sampling::{distill_batches, equally_spaced_frames, pk_batches, SamplerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Teacher,
    Distill,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub stage: Stage,
    pub epochs: u64,
    pub base_lr: f64,
    /// Epochs at which the learning rate is multiplied by `lr_decay`.
    pub milestones: Vec<u64>,
    pub lr_decay: f64,
    pub sampler: SamplerConfig,
    pub loss: LossConfig,
    pub arch: String,
    pub embed_dim: usize,
    pub seed: u64,
    pub augmentation: Augmentation,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::teacher()
    }
}

impl TrainConfig {
    /// Teacher schedule: 300 epochs, lr 1e-4, ×0.1 every 100 epochs.
    pub fn teacher() -> Self {
        Self {
            stage: Stage::Teacher,
            epochs: 300,
            base_lr: 1e-4,
            milestones: alloc::vec![100, 200],
            lr_decay: 0.1,
            sampler: SamplerConfig::default(),
            loss: LossConfig::teacher(),
            arch: "tinyconv".into(),
            embed_dim: DEFAULT_EMBED_DIM,
            seed: 0,
            augmentation: Augmentation::default(),
            adam: AdamConfig::default(),
        }
    }

    /// Student schedule: 500 epochs, decays at 300 and 450.
    pub fn student() -> Self {
        Self {
            stage: Stage::Distill,
            epochs: 500,
            milestones: alloc::vec![300, 450],
            loss: LossConfig::default(),
            ..Self::teacher()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return config("epochs must be >= 1");
        }
        if !(self.base_lr > 0.0) || !(self.lr_decay > 0.0) {
            return config("learning rate and decay must be > 0");
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return config("milestones must be strictly increasing");
        }
        if self.milestones.iter().any(|&m| m >= self.epochs) {
            return config("milestones must be < epochs");
        }
        self.loss.validate()?;
        match self.stage {
            Stage::Teacher => {
                if self.loss.needs_teacher() {
                    return config("teacher training cannot use distillation terms");
                }
                if self.sampler.identities_per_batch < 2 {
                    return config("P (identities per batch) must be >= 2");
                }
                if self.loss.enable_tr && self.sampler.bags_per_identity < 2 {
                    return config("K (bags per identity) must be >= 2 when the triplet loss is enabled");
                }
                if self.sampler.frames_per_bag == 0 {
                    return config("frames_per_bag must be >= 1");
                }
            }
            Stage::Distill => self.sampler.validate(self.loss.enable_tr)?,
        }
        Ok(())
    }

    /// Sampler settings with the run seed applied; every stream in a run
    /// derives from `seed`.
    pub fn effective_sampler(&self) -> SamplerConfig {
        SamplerConfig {
            seed: self.seed,
            ..self.sampler.clone()
        }
    }

    /// Stable digest of the whole configuration.
    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(format!("{self:?}").as_bytes());
        hex(&digest[..8])
    }
}

/// `base_lr · lr_decay^(number of milestones ≤ epoch)`.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: u64) -> f64 {
    let decays = cfg.milestones.iter().filter(|&&m| m <= epoch).count();
    cfg.base_lr * libm::pow(cfg.lr_decay, decays as f64)
}

/// Per-epoch averages of the unweighted loss terms and the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub lr: f64,
    pub ce: f64,
    pub tr: f64,
    pub kd: f64,
    pub dp: f64,
    pub total: f64,
    /// Distillation bags that degraded to a single camera.
    pub single_view_bags: u64,
}

/// Everything needed to continue a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: ModelBundle,
    pub optimizer: Adam,
    pub epochs_done: u64,
    pub log: Vec<EpochRecord>,
}

impl TrainState {
    fn record(&mut self, epoch: u64, lr: f64, sums: &LossBreakdown, total: f64, batches: usize, svb: u64) -> EpochRecord {
        let n = batches.max(1) as f64;
        let rec = EpochRecord {
            epoch,
            lr,
            ce: sums.ce / n,
            tr: sums.tr / n,
            kd: sums.kd / n,
            dp: sums.dp / n,
            total: total / n,
            single_view_bags: svb,
        };
        self.log.push(rec);
        self.epochs_done = epoch + 1;
        rec
    }
}

fn fill_value(norm: &InputNorm) -> [f32; 3] {
    norm.mean
}

fn flatten(bags: &[&SetBag]) -> (Vec<usize>, Vec<usize>) {
    let members = bags.iter().flat_map(|b| b.members.iter().copied()).collect();
    let sizes = bags.iter().map(|b| b.len()).collect();
    (members, sizes)
}

fn to_matrix(rows: usize, cols: usize, data: &[f32]) -> Matrix {
    Matrix::from_f32(rows, cols, data).expect("shape is consistent")
}

fn add_breakdown(acc: &mut LossBreakdown, b: &LossBreakdown) {
    acc.ce += b.ce;
    acc.tr += b.tr;
    acc.kd += b.kd;
    acc.dp += b.dp;
}

/// One optimization step on set-level student outputs. Returns the objective.
fn student_step(
    model: &mut ModelBundle,
    optimizer: &mut Adam,
    lr: f64,
    images: &[f32],
    sizes: &[usize],
    labels: &[u32],
    teacher: Option<(&Matrix, &Matrix)>,
    loss: &LossConfig,
) -> Result<(LossBreakdown, f64)> {
    let n_images: usize = sizes.iter().sum();
    let rows = sizes.len();
    let d = model.embed_dim;
    let c = model.class_count;
    model.zero_grad();
    let (raw_img, tape) = model.embed_images_train(images, n_images)?;
    let raw = aggregate_runs(&raw_img, d, sizes);
    let (out, head_tape) = model.head_forward_train(&raw, rows)?;
    let raw_m = to_matrix(rows, d, &raw);
    let inf_m = to_matrix(rows, d, &out.inference);
    let logits_m = to_matrix(rows, c, &out.logits);
    let objective = vkd_objective(
        &ObjectiveInputs {
            labels,
            raw: &raw_m,
            inference: &inf_m,
            logits: &logits_m,
            teacher: teacher.map(|(logits, inference)| TeacherTargets { logits, inference }),
        },
        loss,
    )?;
    if !objective.total.is_finite() {
        return Err(Error::Numeric(format!("loss diverged to {}", objective.total)));
    }
    let d_raw_head = model.backward_head(
        head_tape,
        &objective.grad_inference.to_f32(),
        &objective.grad_logits.to_f32(),
    );
    let mut d_raw = objective.grad_raw.to_f32();
    for (a, b) in d_raw.iter_mut().zip(&d_raw_head) {
        *a += b;
    }
    model.backward_encoder(tape, &aggregate_runs_backward(&d_raw, d, sizes));
    optimizer.update(&mut model.params_mut(), lr as f32);
    Ok((objective.breakdown, objective.total))
}

/// Stage 1: classification plus batch-hard triplet on tracklet bags.
pub struct TeacherTrainer<'a> {
    data: &'a Dataset,
    images: &'a ImageBank,
    cfg: TrainConfig,
    state: TrainState,
}

impl<'a> TeacherTrainer<'a> {
    pub fn new(data: &'a Dataset, images: &'a ImageBank, cfg: TrainConfig) -> Result<Self> {
        let (mean, std) = images.channel_stats();
        let model = ModelBundle::new(
            &cfg.arch,
            cfg.embed_dim,
            data.class_count(),
            images.size(),
            InputNorm { mean, std },
            cfg.seed,
        )?;
        let state = TrainState {
            model,
            optimizer: Adam::new(cfg.adam),
            epochs_done: 0,
            log: Vec::new(),
        };
        Self::resume(data, images, cfg, state)
    }

    pub fn resume(data: &'a Dataset, images: &'a ImageBank, cfg: TrainConfig, state: TrainState) -> Result<Self> {
        if cfg.stage != Stage::Teacher {
            return config("teacher training requires stage = teacher");
        }
        cfg.validate()?;
        check_images(data, images)?;
        // surfaces infeasible P/K layouts before any work is done
        pk_batches(data, &cfg.effective_sampler(), 0, cfg.loss.enable_tr)?;
        Ok(Self {
            data,
            images,
            cfg,
            state,
        })
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.state.epochs_done >= self.cfg.epochs
    }

    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let epoch = self.state.epochs_done;
        let lr = lr_at_epoch(&self.cfg, epoch);
        let sampler = self.cfg.effective_sampler();
        let batches = pk_batches(self.data, &sampler, epoch, self.cfg.loss.enable_tr)?;
        let mut aug_rng = rng::stream(self.cfg.seed, Stream::Augment, epoch);
        let fill = fill_value(&self.state.model.input_norm);
        let mut sums = LossBreakdown::default();
        let mut total = 0.0;
        for batch in &batches {
            let mut members = Vec::new();
            let mut sizes = Vec::new();
            for bag in &batch.bags {
                let picks = equally_spaced_frames(bag.len(), sampler.frames_per_bag)?;
                members.extend(picks.iter().map(|&p| bag.members[p]));
                sizes.push(picks.len());
            }
            let mut pixels = self.images.gather(&members);
            self.cfg
                .augmentation
                .apply(&mut pixels, self.images.size(), fill, &mut aug_rng);
            let (b, t) = student_step(
                &mut self.state.model,
                &mut self.state.optimizer,
                lr,
                &pixels,
                &sizes,
                &batch.labels,
                None,
                &self.cfg.loss,
            )?;
            add_breakdown(&mut sums, &b);
            total += t;
        }
        Ok(self.state.record(epoch, lr, &sums, total, batches.len(), 0))
    }

    pub fn run(mut self) -> Result<TrainState> {
        while !self.is_done() {
            self.run_epoch()?;
        }
        Ok(self.state)
    }
}

fn check_images(data: &Dataset, images: &ImageBank) -> Result<()> {
    if images.len() != data.len() {
        return Err(Error::Argument(format!(
            "image bank holds {} images for {} samples",
            images.len(),
            data.len()
        )));
    }
    Ok(())
}

/// Trains a teacher from scratch.
pub fn train_teacher(data: &Dataset, images: &ImageBank, cfg: &TrainConfig) -> Result<TrainState> {
    TeacherTrainer::new(data, images, cfg.clone())?.run()
}

/// Stage 2: the student sees M frames of each N-frame teacher bag and is
/// trained on the combined objective against the frozen teacher.
pub struct DistillTrainer<'a> {
    data: &'a Dataset,
    images: &'a ImageBank,
    teacher: &'a ModelBundle,
    teacher_hash: String,
    cfg: TrainConfig,
    state: TrainState,
}

impl<'a> DistillTrainer<'a> {
    pub fn new(data: &'a Dataset, images: &'a ImageBank, teacher: &'a ModelBundle, cfg: TrainConfig) -> Result<Self> {
        let model = init_student_from_teacher(teacher, &cfg.arch, cfg.embed_dim, cfg.seed)?;
        let state = TrainState {
            model,
            optimizer: Adam::new(cfg.adam),
            epochs_done: 0,
            log: Vec::new(),
        };
        Self::resume(data, images, teacher, cfg, state)
    }

    pub fn resume(
        data: &'a Dataset,
        images: &'a ImageBank,
        teacher: &'a ModelBundle,
        cfg: TrainConfig,
        state: TrainState,
    ) -> Result<Self> {
        if cfg.stage != Stage::Distill {
            return config("distillation requires stage = distill");
        }
        cfg.validate()?;
        check_images(data, images)?;
        if teacher.class_count != data.class_count() || state.model.class_count != teacher.class_count {
            return config(format!(
                "teacher has {} classes, student {}, dataset {}",
                teacher.class_count,
                state.model.class_count,
                data.class_count()
            ));
        }
        if teacher.image_size != images.size() {
            return config("teacher image size differs from the dataset's");
        }
        pk_batches(data, &cfg.effective_sampler(), 0, cfg.loss.enable_tr)?;
        Ok(Self {
            data,
            images,
            teacher,
            teacher_hash: teacher.parameter_hash(),
            cfg,
            state,
        })
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    /// Hash of the teacher taken when the trainer was built.
    pub fn teacher_hash(&self) -> &str {
        &self.teacher_hash
    }

    pub fn is_done(&self) -> bool {
        self.state.epochs_done >= self.cfg.epochs
    }

    fn check_teacher(&self) -> Result<()> {
        if self.teacher.parameter_hash() != self.teacher_hash {
            return Err(Error::Integrity("teacher parameters changed during distillation".into()));
        }
        Ok(())
    }

    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        self.check_teacher()?;
        let epoch = self.state.epochs_done;
        let lr = lr_at_epoch(&self.cfg, epoch);
        let batches = distill_batches(self.data, &self.cfg.effective_sampler(), epoch, self.cfg.loss.enable_tr)?;
        let mut aug_rng = rng::stream(self.cfg.seed, Stream::Augment, epoch);
        let size = self.images.size();
        let mut sums = LossBreakdown::default();
        let mut total = 0.0;
        let mut single_view = 0u64;
        for batch in &batches {
            single_view += batch.single_view_bags as u64;
            let rows = batch.items.len();
            let targets = if self.cfg.loss.needs_teacher() {
                let bags: Vec<&SetBag> = batch.items.iter().map(|i| &i.teacher).collect();
                let (members, sizes) = flatten(&bags);
                let mut pixels = self.images.gather(&members);
                self.cfg
                    .augmentation
                    .apply(&mut pixels, size, fill_value(&self.teacher.input_norm), &mut aug_rng);
                let raw = self.teacher.embed_images_batch_stats(&pixels, members.len())?;
                let sets = aggregate_runs(&raw, self.teacher.embed_dim, &sizes);
                let out = self.teacher.head_forward(&sets, rows, NormMode::Batch)?;
                Some((
                    to_matrix(rows, self.teacher.class_count, &out.logits),
                    to_matrix(rows, self.teacher.embed_dim, &out.inference),
                ))
            } else {
                None
            };
            let bags: Vec<&SetBag> = batch.items.iter().map(|i| &i.student).collect();
            let (members, sizes) = flatten(&bags);
            let mut pixels = self.images.gather(&members);
            self.cfg
                .augmentation
                .apply(&mut pixels, size, fill_value(&self.state.model.input_norm), &mut aug_rng);
            let (b, t) = student_step(
                &mut self.state.model,
                &mut self.state.optimizer,
                lr,
                &pixels,
                &sizes,
                &batch.labels,
                targets.as_ref().map(|(l, i)| (l, i)),
                &self.cfg.loss,
            )?;
            add_breakdown(&mut sums, &b);
            total += t;
        }
        self.check_teacher()?;
        Ok(self.state.record(epoch, lr, &sums, total, batches.len(), single_view))
    }

    pub fn run(mut self) -> Result<TrainState> {
        while !self.is_done() {
            self.run_epoch()?;
        }
        Ok(self.state)
    }
}

/// Distills a student from a frozen teacher.
pub fn distill_student(
    data: &Dataset,
    images: &ImageBank,
    teacher: &ModelBundle,
    cfg: &TrainConfig,
) -> Result<TrainState> {
    DistillTrainer::new(data, images, teacher, cfg.clone())?.run()
}
