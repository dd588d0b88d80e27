//! Text, JSON and image outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use vkd_core::analysis::{BlockReport, ProbeReport};
use vkd_core::evaluation::{EvalReport, SweepRow};
use vkd_core::trainer::EpochRecord;

use crate::data::write_png;
use crate::error::{io_err, Result};

pub fn eval_report_text(r: &EvalReport) -> String {
    format!(
        "protocol: {}\nexclusion_rule: {}\ncmc1: {:.6}\ncmc5: {:.6}\ncmc10: {:.6}\nmAP: {:.6}\nnum_queries: {}\ndropped: {}\n",
        r.protocol.name(),
        r.exclusion_rule.name(),
        r.cmc_at(1),
        r.cmc_at(5),
        r.cmc_at(10),
        r.map,
        r.num_queries,
        r.dropped
    )
}

pub fn probe_report_text(r: &ProbeReport, split: &str, rows: usize) -> String {
    format!(
        "accuracy: {:.6}\nprior_accuracy: {:.6}\nnum_cameras: {}\nepochs_trained: {}\nsplit: {split}\nrows: {rows}\n",
        r.accuracy, r.prior_accuracy, r.num_cameras, r.epochs_trained
    )
}

pub fn sweep_text(rows: &[SweepRow]) -> String {
    let mut s = String::from("gallery_frames cmc1 mAP\n");
    for r in rows {
        let _ = writeln!(s, "{} {:.6} {:.6}", r.frames, r.cmc1, r.map);
    }
    s
}

/// Space-separated distance grid, one matrix row per line, preceded by a
/// `#` line listing the identity of each row.
pub fn block_grid_text(r: &BlockReport) -> String {
    let mut s = String::from("# identities:");
    for id in &r.identities {
        let _ = write!(s, " {id}");
    }
    s.push('\n');
    for i in 0..r.matrix.rows() {
        let row: Vec<String> = r.matrix.row(i).iter().map(|v| format!("{v:.6}")).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

pub fn block_summary_text(r: &BlockReport, mode: &str) -> String {
    format!(
        "mode: {mode}\nbags: {}\nintra_mean: {:.6}\ninter_mean: {:.6}\nratio: {:.6}\n",
        r.identities.len(),
        r.intra_mean,
        r.inter_mean,
        r.ratio
    )
}

/// Dark blue for small distances through teal and green to yellow.
fn colormap(t: f64) -> [u8; 3] {
    const STOPS: [[f64; 3]; 5] = [
        [68.0, 1.0, 84.0],
        [59.0, 82.0, 139.0],
        [33.0, 145.0, 140.0],
        [94.0, 201.0, 98.0],
        [253.0, 231.0, 37.0],
    ];
    let x = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (x.floor() as usize).min(STOPS.len() - 2);
    let f = x - i as f64;
    let mut out = [0u8; 3];
    for c in 0..3 {
        out[c] = (STOPS[i][c] * (1.0 - f) + STOPS[i + 1][c] * f).round() as u8;
    }
    out
}

pub fn write_heatmap(path: &Path, r: &BlockReport, cell: usize) -> Result<()> {
    let b = r.matrix.rows();
    let max = r.matrix.as_slice().iter().cloned().fold(0.0, f64::max);
    let side = b * cell;
    let mut rgb = vec![0u8; side * side * 3];
    for y in 0..side {
        for x in 0..side {
            let v = r.matrix.get(y / cell, x / cell);
            let px = colormap(if max > 0.0 { v / max } else { 0.0 });
            rgb[(y * side + x) * 3..][..3].copy_from_slice(&px);
        }
    }
    write_png(path, side as u32, side as u32, &rgb)
}

#[derive(Serialize)]
struct LogLine {
    epoch: u64,
    lr: f64,
    ce: f64,
    tr: f64,
    kd: f64,
    dp: f64,
    total: f64,
}

pub fn log_line(r: &EpochRecord) -> String {
    serde_json::to_string(&LogLine {
        epoch: r.epoch,
        lr: r.lr,
        ce: r.ce,
        tr: r.tr,
        kd: r.kd,
        dp: r.dp,
        total: r.total,
    })
    .expect("plain numbers serialize")
}

pub fn log_jsonl(records: &[EpochRecord]) -> String {
    records.iter().map(|r| log_line(r) + "\n").collect()
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub args: Vec<String>,
    pub config_file: Option<PathBuf>,
    /// Fully resolved settings after merging defaults, config file and flags.
    pub resolved: serde_json::Value,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        write_text(path, &text)
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}
