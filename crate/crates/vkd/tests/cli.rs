use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn vkd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vkd"))
        .args(args)
        .env("VKD_LOG_LEVEL", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = vkd(args);
    assert!(
        out.status.success(),
        "vkd {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_synth_writes_images_and_manifests() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path().join("d");
    ok(&["gen-synth", "--out", s(&d), "--ids", "2", "--cameras", "2", "--tracklets", "1", "--frames", "3", "--seed", "7"]);
    let mut pngs = 0;
    for split in ["train", "query", "gallery"] {
        if let Ok(entries) = fs::read_dir(d.join(split)) {
            pngs += entries.filter(|e| e.as_ref().unwrap().path().extension().unwrap() == "png").count();
        }
    }
    assert_eq!(pngs, 12);
    let mut lines = 0;
    for m in ["train.manifest", "query.manifest", "gallery.manifest"] {
        let text = fs::read_to_string(d.join(m)).unwrap();
        lines += text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#')).count();
    }
    assert_eq!(lines, 12);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("run.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "gen-synth");
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 12 + 3 + 1);
}

#[test]
fn usage_errors_exit_with_2() {
    assert_eq!(vkd(&[]).status.code(), Some(2));
    assert_eq!(vkd(&["teleport"]).status.code(), Some(2));
    assert_eq!(vkd(&["eval", "--ckpt", "x", "--protocol", "i2x"]).status.code(), Some(2));
    assert_eq!(vkd(&["distill", "--out", "s", "--teacher", "t", "-N", "many"]).status.code(), Some(2));
    // no dataset directory anywhere
    assert_eq!(vkd(&["train-teacher", "--out", "t.ckpt"]).status.code(), Some(2));
}

#[test]
fn module_errors_exit_with_1() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("missing.ckpt");
    let out = vkd(&["eval", "--ckpt", s(&missing), "--data", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.ckpt"));

    let junk = tmp.path().join("junk.ckpt");
    fs::write(&junk, b"not a checkpoint").unwrap();
    assert_eq!(vkd(&["eval", "--ckpt", s(&junk), "--data", s(tmp.path())]).status.code(), Some(1));

    let d = tmp.path().join("d");
    ok(&["gen-synth", "--out", s(&d), "--ids", "2", "--cameras", "2", "--tracklets", "2", "--frames", "2"]);
    // only two identities, fewer than P
    let out = vkd(&["train-teacher", "--data", s(&d), "--out", s(&tmp.path().join("t.ckpt")), "--epochs", "1", "--milestones", "0"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_lists_the_default_hyperparameters() {
    let out = ok(&["distill", "--help"]);
    let help = String::from_utf8(out.stdout).unwrap();
    for (flag, default) in [
        ("--identities-per-batch", "8"),
        ("--bags-per-identity", "4"),
        ("--teacher-frames", "8"),
        ("--student-frames", "2"),
        ("--tau", "10"),
        ("--alpha", "0.1"),
        ("--beta", "0.0001"),
    ] {
        let line = help.lines().find(|l| l.contains(flag)).unwrap_or_else(|| panic!("{flag} missing"));
        let block: String = help[help.find(line).unwrap()..].lines().take(3).collect();
        assert!(block.contains(&format!("[default: {default}]")), "{flag}: {block}");
    }
    for short in ["-P", "-K", "-N", "-M"] {
        assert!(help.contains(&format!("{short}, --")), "{short} missing");
    }
}

struct Pipeline {
    _tmp: TempDir,
    root: PathBuf,
}

impl Pipeline {
    fn run() -> Self {
        let tmp = TempDir::new().unwrap();
        let root = tmp.path().to_owned();
        let data = root.join("data");
        ok(&["gen-synth", "--out", s(&data), "--ids", "5", "--cameras", "3", "--tracklets", "2", "--frames", "3", "--image-size", "16", "--seed", "3"]);
        let cfg = root.join("run.toml");
        fs::write(
            &cfg,
            "[data]\ndir = \"data\"\n\n[model]\narch = \"tinyconv-slim\"\nembed_dim = 16\n\n\
             [sampler]\nidentities_per_batch = 3\nbags_per_identity = 2\nframes_per_bag = 3\nteacher_frames = 4\n\n\
             [schedule]\nepochs = 3\nmilestones = [2]\nlr = 0.001\nseed = 4\n\n[eval]\nsizes = [1, 3]\n",
        )
        .unwrap();
        let teacher = root.join("teacher.ckpt");
        let student = root.join("student.ckpt");
        ok(&["train-teacher", "--config", s(&cfg), "--out", s(&teacher)]);
        ok(&["distill", "--config", s(&cfg), "--teacher", s(&teacher), "--out", s(&student)]);
        for p in ["i2i", "i2v", "v2v"] {
            ok(&["eval", "--config", s(&cfg), "--ckpt", s(&student), "--protocol", p]);
        }
        ok(&["probe-camera", "--config", s(&cfg), "--ckpt", s(&student), "--epochs", "50"]);
        ok(&["distmat", "--config", s(&cfg), "--ckpt", s(&student), "--mode", "views", "--ids", "3", "--bags-per-id", "2"]);
        ok(&["sweep-gallery", "--config", s(&cfg), "--ckpt", s(&student)]);
        Pipeline { _tmp: tmp, root }
    }

    fn read(&self, name: &str) -> Vec<u8> {
        fs::read(self.root.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
    }
}

const REPORTS: [&str; 13] = [
    "teacher.ckpt",
    "teacher.ckpt.log.jsonl",
    "student.ckpt",
    "student.ckpt.log.jsonl",
    "student.ckpt.i2i.report.txt",
    "student.ckpt.i2v.report.txt",
    "student.ckpt.v2v.report.txt",
    "student.ckpt.probe.txt",
    "student.ckpt.distmat.views.grid.txt",
    "student.ckpt.distmat.views.txt",
    "student.ckpt.distmat.views.png",
    "student.ckpt.sweep.txt",
    "data/train/00000_000.png",
];

#[test]
fn pipeline_outputs_are_complete_and_reproducible() {
    let a = Pipeline::run();
    let b = Pipeline::run();
    for name in REPORTS {
        assert_eq!(a.read(name), b.read(name), "{name} differs between identical runs");
    }

    let report = String::from_utf8(a.read("student.ckpt.i2v.report.txt")).unwrap();
    let keys: Vec<&str> = report.lines().map(|l| l.split(':').next().unwrap()).collect();
    assert_eq!(keys, ["protocol", "exclusion_rule", "cmc1", "cmc5", "cmc10", "mAP", "num_queries", "dropped"]);

    let log = String::from_utf8(a.read("student.ckpt.log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    for (i, line) in log.lines().enumerate() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let obj = v.as_object().unwrap();
        let mut keys: Vec<&str> = obj.keys().map(String::as_str).collect();
        keys.sort();
        assert_eq!(keys, ["ce", "dp", "epoch", "kd", "lr", "total", "tr"]);
        assert_eq!(v["epoch"], i as u64);
    }

    let grid = String::from_utf8(a.read("student.ckpt.distmat.views.grid.txt")).unwrap();
    assert_eq!(grid.lines().count(), 1 + 6);

    for manifest in ["teacher.ckpt.run.json", "student.ckpt.run.json", "student.ckpt.i2v.report.txt.run.json"] {
        let v: serde_json::Value = serde_json::from_slice(&a.read(manifest)).unwrap();
        assert!(v["config_hash"].as_str().unwrap().len() == 16);
        assert!(v["config_file"].as_str().unwrap().ends_with("run.toml"));
    }
    let student: serde_json::Value = serde_json::from_slice(&a.read("student.ckpt.run.json")).unwrap();
    assert_eq!(student["resolved"]["train"]["loss"]["tau"], 10.0);
    assert_eq!(student["resolved"]["train"]["sampler"]["teacher_frames"], 4);
}

#[test]
fn flags_override_config_values() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    ok(&["gen-synth", "--out", s(&data), "--ids", "4", "--cameras", "2", "--tracklets", "2", "--frames", "2", "--image-size", "16"]);
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, "[model]\narch = \"tinyconv-slim\"\nembed_dim = 8\n[sampler]\nidentities_per_batch = 2\nbags_per_identity = 2\n[schedule]\nepochs = 1\nmilestones = []\nseed = 9\n").unwrap();
    let out = tmp.path().join("t.ckpt");
    ok(&["train-teacher", "--config", s(&cfg), "--data", s(&data), "--out", s(&out), "--seed", "21"]);
    let v: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("t.ckpt.run.json")).unwrap()).unwrap();
    assert_eq!(v["seed"], 21);
    assert_eq!(v["resolved"]["embed_dim"], 8);
    assert_eq!(v["resolved"]["epochs"], 1);
}

#[test]
fn resume_continues_to_the_same_checkpoint() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    ok(&["gen-synth", "--out", s(&data), "--ids", "4", "--cameras", "2", "--tracklets", "2", "--frames", "2", "--image-size", "16"]);
    let common = ["--data", s(&data), "--arch", "tinyconv-slim", "--embed-dim", "8", "-P", "2", "-K", "2", "--epochs", "3", "--milestones", "2", "--lr", "0.001"];
    let full = tmp.path().join("full.ckpt");
    let part = tmp.path().join("part.ckpt");
    let mut args = vec!["train-teacher", "--out", s(&full)];
    args.extend(common);
    ok(&args);
    let mut args = vec!["train-teacher", "--out", s(&part), "--save-every", "1"];
    args.extend(common);
    ok(&args);
    let resumed = tmp.path().join("resumed.ckpt");
    // periodic saves land on the same path, so `part` holds the finished run;
    // resuming it has nothing left to do and must rewrite it unchanged
    let mut args = vec!["train-teacher", "--out", s(&resumed), "--resume", s(&part)];
    args.extend(common);
    ok(&args);
    assert_eq!(fs::read(&full).unwrap(), fs::read(&part).unwrap());
    assert_eq!(fs::read(&full).unwrap(), fs::read(&resumed).unwrap());

    let mut args = vec!["train-teacher", "--out", s(&resumed), "--resume", s(&part), "--seed", "5"];
    args.extend(common);
    assert_eq!(vkd(&args).status.code(), Some(1));
}
