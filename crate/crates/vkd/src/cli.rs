//! Command-line interface.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{ArgAction, ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;
use sha2::{Digest, Sha256};

use vkd_core::analysis::{distance_block_report, fit_camera_probe, ProbeConfig};
use vkd_core::checkpoint::{Checkpoint, StageTag};
use vkd_core::datamodel::{BagMode, Split, SynthConfig};
use vkd_core::evaluation::{
    evaluate_protocol, extract_image_features, gallery_size_sweep, EvalOptions, ExclusionRule, GalleryFrames,
    Protocol,
};
use vkd_core::images::Augmentation;
use vkd_core::losses::Metric;
use vkd_core::model::ModelBundle;
use vkd_core::sampling::DistillSource;
use vkd_core::trainer::{DistillTrainer, EpochRecord, TeacherTrainer, TrainConfig, TrainState};

use crate::config::FileConfig;
use crate::data::{load_split, write_synthetic};
use crate::error::{Error, Result};
use crate::report::{self, RunManifest};
use crate::ckpt;

#[derive(Parser, Debug)]
#[command(name = "vkd", version, about = "Set-based re-identification with views knowledge distillation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render the synthetic multi-camera dataset as PNG frames plus manifests
    GenSynth(GenSynthArgs),
    /// Train a teacher on full tracklets
    TrainTeacher(TeacherArgs),
    /// Distill a student from a frozen teacher on multi-view bags
    Distill(DistillArgs),
    /// Evaluate a checkpoint under the i2i, i2v or v2v protocol
    Eval(EvalArgs),
    /// Fit a linear camera classifier on frozen per-image features
    ProbeCamera(ProbeArgs),
    /// Pairwise distance matrix between tracklet or view bags
    Distmat(DistmatArgs),
    /// I2V accuracy as each gallery tracklet is cut to fewer frames
    SweepGallery(SweepArgs),
}

#[derive(Args, Debug)]
pub struct GenSynthArgs {
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Number of identities
    #[arg(long, default_value_t = 30)]
    pub ids: u32,
    #[arg(long, default_value_t = 4)]
    pub cameras: u32,
    /// Tracklets per identity and camera
    #[arg(long, default_value_t = 2)]
    pub tracklets: u32,
    /// Frames per tracklet
    #[arg(long, default_value_t = 6)]
    pub frames: u32,
    /// Image side in pixels
    #[arg(long, default_value_t = 32)]
    pub image_size: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_metric(s: &str) -> std::result::Result<Metric, String> {
    match s {
        "euclidean" => Ok(Metric::Euclidean),
        "cosine" => Ok(Metric::Cosine),
        _ => Err(format!("unknown metric '{s}' (expected euclidean or cosine)")),
    }
}

fn parse_source(s: &str) -> std::result::Result<DistillSource, String> {
    match s {
        "views" => Ok(DistillSource::Views),
        "tracklet" => Ok(DistillSource::Tracklet),
        _ => Err(format!("unknown source '{s}' (expected views or tracklet)")),
    }
}

/// Settings shared by both training stages.
#[derive(Args, Debug)]
pub struct CommonTrainArgs {
    /// Config file with [data], [model], [sampler], [loss], [schedule] sections
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory holding train.manifest
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint to write
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from this checkpoint
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Training log (JSON lines) [default: <out>.log.jsonl]
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.1)]
    pub lr_decay: f64,
    /// P: identities per batch
    #[arg(short = 'P', long, default_value_t = 8)]
    pub identities_per_batch: usize,
    /// K: bags per identity
    #[arg(short = 'K', long, default_value_t = 4)]
    pub bags_per_identity: usize,
    /// Classification term
    #[arg(long, default_value_t = true, action = ArgAction::Set, value_name = "BOOL")]
    pub ce: bool,
    /// Batch-hard triplet term
    #[arg(long, default_value_t = true, action = ArgAction::Set, value_name = "BOOL")]
    pub tr: bool,
    /// Distance used by the triplet and distance-preservation terms
    #[arg(long, default_value = "euclidean", value_parser = parse_metric)]
    pub distance: Metric,
    /// Random horizontal flips
    #[arg(long, default_value_t = true, action = ArgAction::Set, value_name = "BOOL")]
    pub flip: bool,
    /// Random erasing
    #[arg(long, default_value_t = true, action = ArgAction::Set, value_name = "BOOL")]
    pub random_erase: bool,
    /// Also save the checkpoint every this many epochs (0: only at the end)
    #[arg(long, default_value_t = 0)]
    pub save_every: u64,
}

#[derive(Args, Debug)]
pub struct TeacherArgs {
    #[command(flatten)]
    pub common: CommonTrainArgs,
    #[arg(long, default_value_t = 300)]
    pub epochs: u64,
    /// Epochs at which the learning rate decays
    #[arg(long, value_delimiter = ',', default_values_t = [100u64, 200])]
    pub milestones: Vec<u64>,
    #[arg(long, default_value = "tinyconv")]
    pub arch: String,
    #[arg(long, default_value_t = 64)]
    pub embed_dim: usize,
    /// Frames drawn (equally spaced) from each tracklet bag
    #[arg(long, default_value_t = 8)]
    pub frames_per_bag: usize,
}

#[derive(Args, Debug)]
pub struct DistillArgs {
    #[command(flatten)]
    pub common: CommonTrainArgs,
    /// Teacher checkpoint
    #[arg(long)]
    pub teacher: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub epochs: u64,
    /// Epochs at which the learning rate decays
    #[arg(long, value_delimiter = ',', default_values_t = [300u64, 450])]
    pub milestones: Vec<u64>,
    /// Student architecture [default: the teacher's]
    #[arg(long)]
    pub arch: Option<String>,
    /// Student embedding width [default: the teacher's]
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// N: frames in each teacher bag
    #[arg(short = 'N', long, default_value_t = 8)]
    pub teacher_frames: usize,
    /// M: frames in each student bag
    #[arg(short = 'M', long, default_value_t = 2)]
    pub student_frames: usize,
    /// Teacher bags from several cameras (views) or one tracklet
    #[arg(long, default_value = "views", value_parser = parse_source)]
    pub distill_source: DistillSource,
    /// Distillation temperature
    #[arg(long, default_value_t = 10.0)]
    pub tau: f64,
    /// Weight of the distillation term
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    /// Weight of the distance-preservation term
    #[arg(long, default_value_t = 1e-4)]
    pub beta: f64,
    /// Distillation term
    #[arg(long, default_value_t = true, action = ArgAction::Set, value_name = "BOOL")]
    pub kd: bool,
    /// Distance-preservation term
    #[arg(long, default_value_t = true, action = ArgAction::Set, value_name = "BOOL")]
    pub dp: bool,
}

#[derive(Args, Debug)]
pub struct ModelInput {
    /// Checkpoint to analyse
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Dataset directory
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Config file; its [data] and [eval] sections are used
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub input: ModelInput,
    #[arg(long, default_value = "i2v", value_parser = ["i2i", "i2v", "v2v"])]
    pub protocol: String,
    /// Gallery entries ignored per query
    #[arg(long, default_value = "standard", value_parser = ["standard", "all-same-camera"])]
    pub exclusion: String,
    #[arg(long, default_value = "euclidean", value_parser = parse_metric)]
    pub metric: Metric,
    /// Frames per gallery tracklet: "all" or a count
    #[arg(long, default_value = "all")]
    pub gallery_frames: String,
    /// Report path [default: <ckpt>.<protocol>.report.txt]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub input: ModelInput,
    #[arg(long, default_value = "gallery", value_parser = ["train", "query", "gallery"])]
    pub split: String,
    #[arg(long, default_value_t = 300)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Halve the learning rate every this many epochs
    #[arg(long, default_value_t = 50)]
    pub halve_every: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report path [default: <ckpt>.probe.txt]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DistmatArgs {
    #[command(flatten)]
    pub input: ModelInput,
    #[arg(long, default_value = "gallery", value_parser = ["train", "query", "gallery"])]
    pub split: String,
    #[arg(long, default_value = "tracklet", value_parser = ["tracklet", "views"])]
    pub mode: String,
    /// Identities in the matrix
    #[arg(long, default_value_t = 8)]
    pub ids: usize,
    #[arg(long, default_value_t = 4)]
    pub bags_per_id: usize,
    #[arg(long, default_value_t = 4)]
    pub frames_per_bag: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output prefix [default: <ckpt>.distmat.<mode>]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub input: ModelInput,
    /// Gallery frame counts to evaluate
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 4, 6])]
    pub sizes: Vec<usize>,
    #[arg(long, default_value = "standard", value_parser = ["standard", "all-same-camera"])]
    pub exclusion: String,
    #[arg(long, default_value = "euclidean", value_parser = parse_metric)]
    pub metric: Metric,
    /// Report path [default: <ckpt>.sweep.txt]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Flag values win over the config file only when given on the command line.
struct Merge<'a>(&'a ArgMatches);

impl Merge<'_> {
    fn pick<T>(&self, id: &str, flag: T, file: Option<T>) -> T {
        if self.0.value_source(id) == Some(ValueSource::CommandLine) {
            flag
        } else {
            file.unwrap_or(flag)
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<FileConfig> {
    match path {
        Some(p) => FileConfig::load(p),
        None => Ok(FileConfig::default()),
    }
}

fn data_dir(flag: &Option<PathBuf>, file: &FileConfig) -> Result<PathBuf> {
    flag.clone()
        .or_else(|| file.data.dir.clone())
        .ok_or_else(|| Error::Usage("a dataset directory is required (--data or [data] dir)".into()))
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn hash_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("settings serialize");
    let digest = Sha256::digest(&bytes);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

struct Invocation {
    command: &'static str,
    args: Vec<String>,
    config_file: Option<PathBuf>,
}

impl Invocation {
    fn finish<T: Serialize>(&self, manifest_path: &Path, config_hash: String, seed: u64, resolved: &T, mut outputs: Vec<PathBuf>) -> Result<()> {
        outputs.push(manifest_path.to_owned());
        RunManifest {
            command: self.command.into(),
            config_hash,
            seed,
            version: concat!("vkd ", env!("CARGO_PKG_VERSION")).into(),
            args: self.args.clone(),
            config_file: self.config_file.clone(),
            resolved: serde_json::to_value(resolved).expect("settings serialize"),
            outputs,
        }
        .write(manifest_path)?;
        info!("wrote {}", manifest_path.display());
        Ok(())
    }
}

fn common_config(c: &CommonTrainArgs, m: &Merge<'_>, file: &FileConfig, base: TrainConfig) -> TrainConfig {
    let mut cfg = base;
    let s = &file.schedule;
    cfg.seed = m.pick("seed", c.seed, s.seed);
    cfg.base_lr = m.pick("lr", c.lr, s.lr);
    cfg.lr_decay = m.pick("lr_decay", c.lr_decay, s.lr_decay);
    cfg.augmentation = Augmentation {
        flip: m.pick("flip", c.flip, s.flip),
        random_erase: m.pick("random_erase", c.random_erase, s.random_erase),
    };
    let sp = &file.sampler;
    cfg.sampler.identities_per_batch = m.pick("identities_per_batch", c.identities_per_batch, sp.identities_per_batch);
    cfg.sampler.bags_per_identity = m.pick("bags_per_identity", c.bags_per_identity, sp.bags_per_identity);
    let l = &file.loss;
    cfg.loss.enable_ce = m.pick("ce", c.ce, l.ce);
    cfg.loss.enable_tr = m.pick("tr", c.tr, l.tr);
    cfg.loss.distance = m.pick("distance", c.distance, l.distance);
    cfg
}

fn teacher_config(a: &TeacherArgs, m: &Merge<'_>, file: &FileConfig) -> TrainConfig {
    let mut cfg = common_config(&a.common, m, file, TrainConfig::teacher());
    cfg.epochs = m.pick("epochs", a.epochs, file.schedule.epochs);
    cfg.milestones = m.pick("milestones", a.milestones.clone(), file.schedule.milestones.clone());
    cfg.arch = m.pick("arch", a.arch.clone(), file.model.arch.clone());
    cfg.embed_dim = m.pick("embed_dim", a.embed_dim, file.model.embed_dim);
    cfg.sampler.frames_per_bag = m.pick("frames_per_bag", a.frames_per_bag, file.sampler.frames_per_bag);
    cfg
}

fn distill_config(a: &DistillArgs, m: &Merge<'_>, file: &FileConfig, teacher: &ModelBundle) -> TrainConfig {
    let mut cfg = common_config(&a.common, m, file, TrainConfig::student());
    cfg.epochs = m.pick("epochs", a.epochs, file.schedule.epochs);
    cfg.milestones = m.pick("milestones", a.milestones.clone(), file.schedule.milestones.clone());
    cfg.arch = a.arch.clone().or(file.model.arch.clone()).unwrap_or(teacher.arch_id.clone());
    cfg.embed_dim = a.embed_dim.or(file.model.embed_dim).unwrap_or(teacher.embed_dim);
    let sp = &file.sampler;
    cfg.sampler.teacher_frames = m.pick("teacher_frames", a.teacher_frames, sp.teacher_frames);
    cfg.sampler.student_frames = m.pick("student_frames", a.student_frames, sp.student_frames);
    cfg.sampler.distill_source = m.pick("distill_source", a.distill_source, sp.distill_source);
    let l = &file.loss;
    cfg.loss.tau = m.pick("tau", a.tau, l.tau);
    cfg.loss.alpha = m.pick("alpha", a.alpha, l.alpha);
    cfg.loss.beta = m.pick("beta", a.beta, l.beta);
    cfg.loss.enable_kd = m.pick("kd", a.kd, l.kd);
    cfg.loss.enable_dp = m.pick("dp", a.dp, l.dp);
    cfg
}

trait Runner {
    fn is_done(&self) -> bool;
    fn run_epoch(&mut self) -> vkd_core::Result<EpochRecord>;
    fn state(&self) -> &TrainState;
}

impl Runner for TeacherTrainer<'_> {
    fn is_done(&self) -> bool {
        TeacherTrainer::is_done(self)
    }
    fn run_epoch(&mut self) -> vkd_core::Result<EpochRecord> {
        TeacherTrainer::run_epoch(self)
    }
    fn state(&self) -> &TrainState {
        TeacherTrainer::state(self)
    }
}

impl Runner for DistillTrainer<'_> {
    fn is_done(&self) -> bool {
        DistillTrainer::is_done(self)
    }
    fn run_epoch(&mut self) -> vkd_core::Result<EpochRecord> {
        DistillTrainer::run_epoch(self)
    }
    fn state(&self) -> &TrainState {
        DistillTrainer::state(self)
    }
}

struct SaveTarget<'a> {
    out: &'a Path,
    log: &'a Path,
    stage: StageTag,
    config_hash: String,
    teacher_hash: Option<String>,
    save_every: u64,
    epochs: u64,
}

impl SaveTarget<'_> {
    fn save(&self, state: &TrainState) -> Result<()> {
        ckpt::save(
            self.out,
            &Checkpoint {
                stage: self.stage,
                config_hash: self.config_hash.clone(),
                teacher_hash: self.teacher_hash.clone(),
                state: state.clone(),
            },
        )?;
        report::write_text(self.log, &report::log_jsonl(&state.log))
    }

    fn drive(&self, runner: &mut dyn Runner) -> Result<()> {
        while !runner.is_done() {
            let r = runner.run_epoch()?;
            info!(
                "epoch {}/{} lr={:.2e} ce={:.4} tr={:.4} kd={:.4} dp={:.4} total={:.4}",
                r.epoch + 1,
                self.epochs,
                r.lr,
                r.ce,
                r.tr,
                r.kd,
                r.dp,
                r.total
            );
            if r.single_view_bags > 0 {
                warn!("epoch {}: {} teacher bags covered a single camera", r.epoch, r.single_view_bags);
            }
            if self.save_every > 0 && (r.epoch + 1) % self.save_every == 0 && !runner.is_done() {
                self.save(runner.state())?;
            }
        }
        self.save(runner.state())
    }
}

fn resume_state(path: &Path, stage: StageTag, config_hash: &str) -> Result<TrainState> {
    let c = ckpt::load(path)?;
    if c.stage != stage {
        return Err(vkd_core::Error::Config(format!(
            "cannot resume a {} run from a {} checkpoint",
            stage.name(),
            c.stage.name()
        ))
        .into());
    }
    if c.config_hash != config_hash {
        return Err(vkd_core::Error::Config(format!(
            "checkpoint was written under config {}, current config is {config_hash}",
            c.config_hash
        ))
        .into());
    }
    info!("resuming after epoch {}", c.state.epochs_done);
    Ok(c.state)
}

fn train_teacher_cmd(a: &TeacherArgs, m: &ArgMatches, inv: &Invocation) -> Result<()> {
    let file = load_config(&a.common.config)?;
    let cfg = teacher_config(a, &Merge(m), &file);
    let dir = data_dir(&a.common.data, &file)?;
    let train = load_split(&dir, Split::Train)?;
    let hash = cfg.config_hash();
    let log = a.common.log.clone().unwrap_or_else(|| suffixed(&a.common.out, ".log.jsonl"));
    let mut trainer = match &a.common.resume {
        Some(p) => TeacherTrainer::resume(
            &train.dataset,
            &train.images,
            cfg.clone(),
            resume_state(p, StageTag::Teacher, &hash)?,
        )?,
        None => TeacherTrainer::new(&train.dataset, &train.images, cfg.clone())?,
    };
    info!(
        "teacher: {} images, {} identities, {} parameters",
        train.dataset.len(),
        train.dataset.class_count(),
        trainer.state().model.parameter_count()
    );
    let target = SaveTarget {
        out: &a.common.out,
        log: &log,
        stage: StageTag::Teacher,
        config_hash: hash.clone(),
        teacher_hash: None,
        save_every: save_every(&a.common, m, &file),
        epochs: cfg.epochs,
    };
    target.drive(&mut trainer)?;
    inv.finish(
        &suffixed(&a.common.out, ".run.json"),
        hash,
        cfg.seed,
        &cfg,
        vec![a.common.out.clone(), log],
    )
}

fn save_every(c: &CommonTrainArgs, m: &ArgMatches, file: &FileConfig) -> u64 {
    Merge(m).pick("save_every", c.save_every, file.schedule.save_every)
}

fn distill_cmd(a: &DistillArgs, m: &ArgMatches, inv: &Invocation) -> Result<()> {
    let file = load_config(&a.common.config)?;
    let teacher = ckpt::load(&a.teacher)?.state.model;
    let cfg = distill_config(a, &Merge(m), &file, &teacher);
    let dir = data_dir(&a.common.data, &file)?;
    let train = load_split(&dir, Split::Train)?;
    let hash = cfg.config_hash();
    let log = a.common.log.clone().unwrap_or_else(|| suffixed(&a.common.out, ".log.jsonl"));
    let mut trainer = match &a.common.resume {
        Some(p) => DistillTrainer::resume(
            &train.dataset,
            &train.images,
            &teacher,
            cfg.clone(),
            resume_state(p, StageTag::Student, &hash)?,
        )?,
        None => DistillTrainer::new(&train.dataset, &train.images, &teacher, cfg.clone())?,
    };
    let teacher_hash = trainer.teacher_hash().to_owned();
    info!("student {} (D={}), teacher {}", cfg.arch, cfg.embed_dim, &teacher_hash[..12]);
    let target = SaveTarget {
        out: &a.common.out,
        log: &log,
        stage: StageTag::Student,
        config_hash: hash.clone(),
        teacher_hash: Some(teacher_hash.clone()),
        save_every: save_every(&a.common, m, &file),
        epochs: cfg.epochs,
    };
    target.drive(&mut trainer)?;
    drop(trainer);
    if teacher.parameter_hash() != teacher_hash {
        return Err(vkd_core::Error::Integrity("teacher changed during distillation".into()).into());
    }
    #[derive(Serialize)]
    struct Resolved<'a> {
        train: &'a TrainConfig,
        teacher: &'a Path,
        teacher_hash: &'a str,
    }
    inv.finish(
        &suffixed(&a.common.out, ".run.json"),
        hash,
        cfg.seed,
        &Resolved {
            train: &cfg,
            teacher: &a.teacher,
            teacher_hash: &teacher_hash,
        },
        vec![a.common.out.clone(), log],
    )
}

fn parse_gallery_frames(s: &str) -> Result<GalleryFrames> {
    if s == "all" {
        return Ok(GalleryFrames::All);
    }
    match s.parse::<usize>() {
        Ok(n) if n >= 1 => Ok(GalleryFrames::Count(n)),
        _ => Err(vkd_core::Error::Config(format!("gallery frames must be 'all' or a positive count, got '{s}'")).into()),
    }
}

#[derive(Serialize)]
struct EvalSettings {
    ckpt: PathBuf,
    data: PathBuf,
    protocol: String,
    exclusion: String,
    metric: Metric,
    gallery_frames: String,
}

fn eval_cmd(a: &EvalArgs, m: &ArgMatches, inv: &Invocation) -> Result<()> {
    let file = load_config(&a.input.config)?;
    let mg = Merge(m);
    let e = &file.eval;
    let settings = EvalSettings {
        ckpt: a.input.ckpt.clone(),
        data: data_dir(&a.input.data, &file)?,
        protocol: mg.pick("protocol", a.protocol.clone(), e.protocol.clone()),
        exclusion: mg.pick("exclusion", a.exclusion.clone(), e.exclusion.clone()),
        metric: mg.pick("metric", a.metric, e.metric),
        gallery_frames: mg.pick("gallery_frames", a.gallery_frames.clone(), e.gallery_frames.clone()),
    };
    let protocol: Protocol = settings.protocol.parse()?;
    let options = EvalOptions {
        metric: settings.metric,
        exclusion: settings.exclusion.parse::<ExclusionRule>()?,
        gallery_frames: parse_gallery_frames(&settings.gallery_frames)?,
    };
    let model = ckpt::load(&a.input.ckpt)?.state.model;
    let query = load_split(&settings.data, Split::Query)?;
    let gallery = load_split(&settings.data, Split::Gallery)?;
    let r = evaluate_protocol(&model, query.view(), gallery.view(), protocol, &options)?;
    info!("{}", r.summary());
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| suffixed(&a.input.ckpt, &format!(".{}.report.txt", protocol.name())));
    report::write_text(&out, &report::eval_report_text(&r))?;
    inv.finish(&suffixed(&out, ".run.json"), hash_json(&settings), 0, &settings, vec![out])
}

fn split_named(s: &str) -> Split {
    match s {
        "train" => Split::Train,
        "query" => Split::Query,
        _ => Split::Gallery,
    }
}

fn probe_cmd(a: &ProbeArgs, m: &ArgMatches, inv: &Invocation) -> Result<()> {
    let file = load_config(&a.input.config)?;
    let dir = data_dir(&a.input.data, &file)?;
    let cfg = ProbeConfig {
        epochs: a.epochs,
        lr: a.lr,
        halve_every: a.halve_every,
        seed: Merge(m).pick("seed", a.seed, file.schedule.seed),
        ..ProbeConfig::default()
    };
    let ckpt = ckpt::load(&a.input.ckpt)?;
    let before = ckpt.state.model.parameter_hash();
    let data = load_split(&dir, split_named(&a.split))?;
    let table = extract_image_features(&ckpt.state.model, data.view())?;
    let r = fit_camera_probe(&table, &cfg)?;
    debug_assert_eq!(before, ckpt.state.model.parameter_hash());
    info!("camera probe accuracy {:.4} (prior {:.4})", r.accuracy, r.prior_accuracy);
    let out = a.out.clone().unwrap_or_else(|| suffixed(&a.input.ckpt, ".probe.txt"));
    report::write_text(&out, &report::probe_report_text(&r, &a.split, table.len()))?;
    #[derive(Serialize)]
    struct Resolved<'a> {
        ckpt: &'a Path,
        data: &'a Path,
        split: &'a str,
        probe: ProbeConfig,
    }
    let resolved = Resolved {
        ckpt: &a.input.ckpt,
        data: &dir,
        split: &a.split,
        probe: cfg,
    };
    inv.finish(&suffixed(&out, ".run.json"), hash_json(&resolved), cfg.seed, &resolved, vec![out])
}

fn distmat_cmd(a: &DistmatArgs, m: &ArgMatches, inv: &Invocation) -> Result<()> {
    let file = load_config(&a.input.config)?;
    let dir = data_dir(&a.input.data, &file)?;
    let seed = Merge(m).pick("seed", a.seed, file.schedule.seed);
    let mode = if a.mode == "views" { BagMode::Views } else { BagMode::Tracklet };
    let model = ckpt::load(&a.input.ckpt)?.state.model;
    let data = load_split(&dir, split_named(&a.split))?;
    let r = distance_block_report(&model, data.view(), mode, a.ids, a.bags_per_id, a.frames_per_bag, seed)?;
    info!("{} bags: intra/inter distance ratio {:.4}", a.mode, r.ratio);
    let prefix = a
        .out
        .clone()
        .unwrap_or_else(|| suffixed(&a.input.ckpt, &format!(".distmat.{}", a.mode)));
    let grid = suffixed(&prefix, ".grid.txt");
    let png = suffixed(&prefix, ".png");
    let summary = suffixed(&prefix, ".txt");
    report::write_text(&grid, &report::block_grid_text(&r))?;
    report::write_text(&summary, &report::block_summary_text(&r, &a.mode))?;
    report::write_heatmap(&png, &r, 8)?;
    #[derive(Serialize)]
    struct Resolved<'a> {
        ckpt: &'a Path,
        data: &'a Path,
        split: &'a str,
        mode: &'a str,
        ids: usize,
        bags_per_id: usize,
        frames_per_bag: usize,
        seed: u64,
    }
    let resolved = Resolved {
        ckpt: &a.input.ckpt,
        data: &dir,
        split: &a.split,
        mode: &a.mode,
        ids: a.ids,
        bags_per_id: a.bags_per_id,
        frames_per_bag: a.frames_per_bag,
        seed,
    };
    inv.finish(&suffixed(&prefix, ".run.json"), hash_json(&resolved), seed, &resolved, vec![grid, png, summary])
}

fn sweep_cmd(a: &SweepArgs, m: &ArgMatches, inv: &Invocation) -> Result<()> {
    let file = load_config(&a.input.config)?;
    let mg = Merge(m);
    let dir = data_dir(&a.input.data, &file)?;
    let sizes = mg.pick("sizes", a.sizes.clone(), file.eval.sizes.clone());
    let exclusion = mg.pick("exclusion", a.exclusion.clone(), file.eval.exclusion.clone());
    let metric = mg.pick("metric", a.metric, file.eval.metric);
    let options = EvalOptions {
        metric,
        exclusion: exclusion.parse()?,
        gallery_frames: GalleryFrames::All,
    };
    let model = ckpt::load(&a.input.ckpt)?.state.model;
    let query = load_split(&dir, Split::Query)?;
    let gallery = load_split(&dir, Split::Gallery)?;
    let rows = gallery_size_sweep(&model, query.view(), gallery.view(), &sizes, &options)?;
    let out = a.out.clone().unwrap_or_else(|| suffixed(&a.input.ckpt, ".sweep.txt"));
    report::write_text(&out, &report::sweep_text(&rows))?;
    #[derive(Serialize)]
    struct Resolved<'a> {
        ckpt: &'a Path,
        data: &'a Path,
        sizes: &'a [usize],
        exclusion: &'a str,
        metric: Metric,
    }
    let resolved = Resolved {
        ckpt: &a.input.ckpt,
        data: &dir,
        sizes: &sizes,
        exclusion: &exclusion,
        metric,
    };
    inv.finish(&suffixed(&out, ".run.json"), hash_json(&resolved), 0, &resolved, vec![out])
}

fn gen_synth_cmd(a: &GenSynthArgs, inv: &Invocation) -> Result<()> {
    let cfg = SynthConfig {
        num_identities: a.ids,
        num_cameras: a.cameras,
        tracklets_per_id_camera: a.tracklets,
        frames_per_tracklet: a.frames,
        image_size: a.image_size,
        seed: a.seed,
    };
    let outputs = write_synthetic(&a.out, &cfg)?;
    info!("wrote {} files under {}", outputs.len(), a.out.display());
    inv.finish(&a.out.join("run.json"), hash_json(&cfg), cfg.seed, &cfg, outputs)
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("VKD_LOG_LEVEL", "info");
    let _ = env_logger::Builder::from_env(env)
        .format_timestamp(None)
        .format_target(false)
        .try_init();
}

/// Parses `argv` and runs the command. Returns the process exit code:
/// 0 on success, 2 for usage errors, 1 for everything else.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let matches = match Cli::command().try_get_matches_from(&argv) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return 2;
        }
    };
    let (name, sub) = matches.subcommand().expect("a subcommand is required");
    let config_file = match &cli.command {
        Command::TrainTeacher(a) => a.common.config.clone(),
        Command::Distill(a) => a.common.config.clone(),
        Command::Eval(a) => a.input.config.clone(),
        Command::ProbeCamera(a) => a.input.config.clone(),
        Command::Distmat(a) => a.input.config.clone(),
        Command::SweepGallery(a) => a.input.config.clone(),
        Command::GenSynth(_) => None,
    };
    let inv = Invocation {
        command: match &cli.command {
            Command::GenSynth(_) => "gen-synth",
            Command::TrainTeacher(_) => "train-teacher",
            Command::Distill(_) => "distill",
            Command::Eval(_) => "eval",
            Command::ProbeCamera(_) => "probe-camera",
            Command::Distmat(_) => "distmat",
            Command::SweepGallery(_) => "sweep-gallery",
        },
        args: argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect(),
        config_file,
    };
    debug_assert_eq!(name, inv.command);
    let result = match &cli.command {
        Command::GenSynth(a) => gen_synth_cmd(a, &inv),
        Command::TrainTeacher(a) => train_teacher_cmd(a, sub, &inv),
        Command::Distill(a) => distill_cmd(a, sub, &inv),
        Command::Eval(a) => eval_cmd(a, sub, &inv),
        Command::ProbeCamera(a) => probe_cmd(a, sub, &inv),
        Command::Distmat(a) => distmat_cmd(a, sub, &inv),
        Command::SweepGallery(a) => sweep_cmd(a, sub, &inv),
    };
    match result {
        Ok(()) => 0,
        Err(Error::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
