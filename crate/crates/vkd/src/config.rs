//! Experiment config files (TOML). Every key is optional; command-line flags
//! take precedence over the file, the file over built-in defaults.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vkd_core::losses::Metric;
use vkd_core::sampling::DistillSource;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub sampler: SamplerSection,
    pub loss: LossSection,
    pub schedule: ScheduleSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Dataset directory; relative paths are taken from the config file's directory.
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub arch: Option<String>,
    pub embed_dim: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub identities_per_batch: Option<usize>,
    pub bags_per_identity: Option<usize>,
    pub frames_per_bag: Option<usize>,
    pub teacher_frames: Option<usize>,
    pub student_frames: Option<usize>,
    pub distill_source: Option<DistillSource>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub tau: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub ce: Option<bool>,
    pub tr: Option<bool>,
    pub kd: Option<bool>,
    pub dp: Option<bool>,
    pub distance: Option<Metric>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub epochs: Option<u64>,
    pub lr: Option<f64>,
    pub milestones: Option<Vec<u64>>,
    pub lr_decay: Option<f64>,
    pub seed: Option<u64>,
    pub flip: Option<bool>,
    pub random_erase: Option<bool>,
    pub save_every: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub protocol: Option<String>,
    pub exclusion: Option<String>,
    pub metric: Option<Metric>,
    pub gallery_frames: Option<String>,
    pub sizes: Option<Vec<usize>>,
}

impl FileConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg: FileConfig = toml::from_str(text).map_err(|e| Error::ConfigFile {
            path: origin.to_owned(),
            message: e.to_string(),
        })?;
        if let (Some(dir), Some(base)) = (&cfg.data.dir, origin.parent()) {
            if dir.is_relative() {
                cfg.data.dir = Some(base.join(dir));
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(crate::error::io_err(path))?;
        Self::parse(&text, path)
    }
}
