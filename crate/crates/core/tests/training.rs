use std::collections::BTreeMap;

use vkd_core::checkpoint::{decode, encode, Checkpoint, StageTag};
use vkd_core::datamodel::{
    format_manifest, parse_manifest, render_frame, synthetic_layout, Dataset, Sample, Split, SynthConfig,
};
use vkd_core::images::ImageBank;
use vkd_core::trainer::{DistillTrainer, TeacherTrainer, TrainConfig, TrainState};

fn tiny() -> SynthConfig {
    SynthConfig {
        num_identities: 6,
        num_cameras: 3,
        tracklets_per_id_camera: 2,
        frames_per_tracklet: 3,
        image_size: 16,
        seed: 5,
    }
}

fn render(cfg: &SynthConfig, samples: &[Sample], split: Split) -> (Dataset, ImageBank) {
    let mut bank = ImageBank::new(cfg.image_size as usize);
    for s in samples {
        bank.push_rgb8(&render_frame(cfg, s)).unwrap();
    }
    (Dataset::new(samples.to_vec(), split).unwrap(), bank)
}

fn teacher_cfg(epochs: u64) -> TrainConfig {
    let mut t = TrainConfig::teacher();
    t.epochs = epochs;
    t.milestones = vec![epochs - 1];
    t.base_lr = 1e-3;
    t.arch = "tinyconv-slim".into();
    t.embed_dim = 16;
    t.seed = 11;
    t.sampler.identities_per_batch = 3;
    t.sampler.bags_per_identity = 2;
    t.sampler.frames_per_bag = 3;
    t
}

fn student_cfg(epochs: u64) -> TrainConfig {
    let mut s = TrainConfig::student();
    s.epochs = epochs;
    s.milestones = vec![2];
    s.base_lr = 1e-3;
    s.arch = "tinyconv-slim".into();
    s.embed_dim = 16;
    s.seed = 12;
    s.sampler.identities_per_batch = 3;
    s.sampler.bags_per_identity = 2;
    s.sampler.teacher_frames = 4;
    s.sampler.student_frames = 2;
    s
}

fn snapshot(stage: StageTag, state: &TrainState) -> Vec<u8> {
    encode(&Checkpoint {
        stage,
        config_hash: "fixed".into(),
        teacher_hash: None,
        state: state.clone(),
    })
}

#[test]
fn teacher_resume_matches_uninterrupted_run() {
    let cfg = tiny();
    let layout = synthetic_layout(&cfg).unwrap();
    let (data, images) = render(&cfg, &layout.train, Split::Train);

    let straight = TeacherTrainer::new(&data, &images, teacher_cfg(3)).unwrap().run().unwrap();

    let mut first = TeacherTrainer::new(&data, &images, teacher_cfg(3)).unwrap();
    first.run_epoch().unwrap();
    first.run_epoch().unwrap();
    let bytes = snapshot(StageTag::Teacher, first.state());
    let restored = decode(&bytes).unwrap().state;
    let resumed = TeacherTrainer::resume(&data, &images, teacher_cfg(3), restored).unwrap().run().unwrap();

    assert_eq!(snapshot(StageTag::Teacher, &straight), snapshot(StageTag::Teacher, &resumed));
}

#[test]
fn distillation_resumes_exactly_and_leaves_the_teacher_alone() {
    let cfg = tiny();
    let layout = synthetic_layout(&cfg).unwrap();
    let (data, images) = render(&cfg, &layout.train, Split::Train);
    let teacher = TeacherTrainer::new(&data, &images, teacher_cfg(2)).unwrap().run().unwrap().model;
    let before = teacher.parameter_hash();

    let straight = DistillTrainer::new(&data, &images, &teacher, student_cfg(3)).unwrap().run().unwrap();

    let mut first = DistillTrainer::new(&data, &images, &teacher, student_cfg(3)).unwrap();
    first.run_epoch().unwrap();
    let restored = decode(&snapshot(StageTag::Student, first.state())).unwrap().state;
    let resumed = DistillTrainer::resume(&data, &images, &teacher, student_cfg(3), restored)
        .unwrap()
        .run()
        .unwrap();

    assert_eq!(snapshot(StageTag::Student, &straight), snapshot(StageTag::Student, &resumed));
    assert_eq!(teacher.parameter_hash(), before);
    assert!(straight.log.iter().all(|r| r.kd > 0.0 && r.dp > 0.0));
}

#[test]
fn synthetic_manifests_round_trip_with_expected_counts() {
    let cfg = SynthConfig::default();
    let layout = synthetic_layout(&cfg).unwrap();
    let mut per_split = BTreeMap::new();
    for split in [Split::Train, Split::Query, Split::Gallery] {
        let text = format_manifest(layout.split(split));
        let ds = parse_manifest(&text, split).unwrap();
        assert_eq!(ds.samples(), layout.split(split));
        per_split.insert(split.name(), ds);
    }
    let (ids, cams, tpc, frames) = (30usize, 4usize, 2usize, 6usize);
    let gallery = &per_split["gallery"];
    let query = &per_split["query"];
    let train = &per_split["train"];
    assert_eq!(gallery.len(), ids * cams * frames);
    assert_eq!(query.len(), ids * frames);
    assert_eq!(train.len(), ids * (cams * tpc - cams - 1) * frames);
    assert_eq!(gallery.tracklets().len(), ids * cams);
    assert_eq!(query.tracklets().len(), ids);
    for ds in per_split.values() {
        assert!(ds.tracklets().values().all(|m| m.len() == frames));
    }
    assert_eq!(gallery.cameras().len(), cams);
    assert_eq!(train.class_count(), ids);
    let per_id_cam: BTreeMap<(u32, u32), usize> = gallery.samples().iter().fold(BTreeMap::new(), |mut m, s| {
        *m.entry((s.identity, s.camera)).or_default() += 1;
        m
    });
    assert!(per_id_cam.values().all(|&n| n == frames));
}

#[test]
fn generator_is_deterministic() {
    let cfg = tiny();
    let a = synthetic_layout(&cfg).unwrap();
    let b = synthetic_layout(&cfg).unwrap();
    assert_eq!(a, b);
    for s in a.all() {
        assert_eq!(render_frame(&cfg, s), render_frame(&cfg, s));
    }
}

// Leave-one-tracklet-out nearest centroid on raw pixels. Beating the prior
// confirms the renderer leaves a camera signal for the probe to find.
#[test]
fn raw_pixels_predict_camera_above_prior() {
    let cfg = SynthConfig::default();
    let layout = synthetic_layout(&cfg).unwrap();
    let samples: Vec<&Sample> = layout.all().collect();
    let pixels: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| render_frame(&cfg, s).into_iter().map(|v| v as f64 / 255.0).collect())
        .collect();
    let dim = pixels[0].len();
    let cams = cfg.num_cameras as usize;
    let mut sums = vec![vec![0.0; dim]; cams];
    let mut counts = vec![0usize; cams];
    for (s, p) in samples.iter().zip(&pixels) {
        counts[s.camera as usize] += 1;
        for (a, b) in sums[s.camera as usize].iter_mut().zip(p) {
            *a += b;
        }
    }
    let mut by_tracklet: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        by_tracklet.entry(s.tracklet).or_default().push(i);
    }
    let mut correct = 0;
    for members in by_tracklet.values() {
        let cam = samples[members[0]].camera as usize;
        let mut held = vec![0.0; dim];
        for &i in members {
            for (a, b) in held.iter_mut().zip(&pixels[i]) {
                *a += b;
            }
        }
        for &i in members {
            let mut best = (f64::INFINITY, 0);
            for c in 0..cams {
                let (sum, n) = if c == cam {
                    (sums[c].iter().zip(&held).map(|(a, b)| a - b).collect::<Vec<_>>(), counts[c] - members.len())
                } else {
                    (sums[c].clone(), counts[c])
                };
                let d: f64 = sum.iter().zip(&pixels[i]).map(|(a, b)| (a / n as f64 - b).powi(2)).sum();
                if d < best.0 {
                    best = (d, c);
                }
            }
            correct += (best.1 == cam) as usize;
        }
    }
    let accuracy = correct as f64 / samples.len() as f64;
    let prior: f64 = counts.iter().map(|&c| (c as f64 / samples.len() as f64).powi(2)).sum();
    assert!(accuracy > prior + 0.1, "nearest centroid {accuracy:.3} vs prior {prior:.3}");
}
