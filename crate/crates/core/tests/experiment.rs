use std::fs;

use geomem::camera::{EgomotionNoise, NoiseMode};
use geomem::config::RunConfig;
use geomem::experiment::*;
use geomem::memory::ModelConfig;
use geomem::policy::PolicyKind;

fn tiny_config(dir: &std::path::Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.model = ModelConfig {
        grid: 16,
        memory_resolution: 8,
        hidden: 2,
        embed: 2,
    };
    cfg.dataset.count = 6;
    cfg.dataset.train_fraction = 0.5;
    cfg.train.steps = 12;
    cfg.train.learning_rate = 0.1;
    cfg.train.samples_per_instance = 4;
    cfg.policy.updates = 2;
    cfg.policy.batch = 2;
    cfg.policy.oracle_samples = 4;
    cfg.output_dir = dir.to_path_buf();
    cfg.validate().unwrap();
    cfg
}

#[test]
fn training_artifacts_are_stamped_and_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_train_recon(&cfg, &a, |_| {}).unwrap();
    run_train_recon(&cfg, &b, |_| {}).unwrap();
    for name in [TRAIN_LOG, geomem::tensor_io::PARAMS_FILE, geomem::tensor_io::MANIFEST_FILE] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let log = fs::read_to_string(a.join(TRAIN_LOG)).unwrap();
    let header: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(header["schema"], TRAIN_LOG_SCHEMA);
    assert_eq!(header["provenance"]["config_hash"], cfg.hash());
    assert_eq!(log.lines().count(), cfg.train.steps + 1);
    let (_, manifest) = load_model(&a).unwrap();
    assert_eq!(manifest.config_hash, cfg.hash());
}

#[test]
fn evaluation_is_deterministic_and_zero_sigma_equals_off() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let dir = recon_dir(&cfg);
    run_train_recon(&cfg, &dir, |_| {}).unwrap();
    let (model, manifest) = load_model(&dir).unwrap();
    let off = EgomotionNoise::off();
    let (s1, e1) = run_eval(&cfg, &model, &manifest, PolicyKind::Random, None, off, 5).unwrap();
    let (s2, e2) = run_eval(&cfg, &model, &manifest, PolicyKind::Random, None, off, 5).unwrap();
    assert_eq!(s1, s2);
    assert_eq!(e1, e2);
    assert_eq!(s1.scenes, 3);
    // Twelve training steps may leave the first-view IoU at zero, in which
    // case the percent-increase curve is reported as missing.
    assert!(matches!(s1.percent_increase[0], None | Some(0.0)));
    for mode in [NoiseMode::Independent, NoiseMode::Accumulating] {
        let zero = EgomotionNoise { sigma_deg: 0.0, mode };
        let (_, ez) = run_eval(&cfg, &model, &manifest, PolicyKind::Random, None, zero, 5).unwrap();
        assert_eq!(ez, e1, "{mode:?}");
    }
    let (da, db) = (tmp.path().join("eval_a"), tmp.path().join("eval_b"));
    write_eval(&da, &s1, &e1).unwrap();
    write_eval(&db, &s2, &e2).unwrap();
    for name in [SUMMARY_FILE, PER_SCENE_FILE] {
        assert_eq!(fs::read(da.join(name)).unwrap(), fs::read(db.join(name)).unwrap());
    }
    let csv = fs::read_to_string(da.join(PER_SCENE_FILE)).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * cfg.eval.views);
    assert!(csv.lines().nth(1).unwrap().starts_with(PER_SCENE_SCHEMA));
}

#[test]
fn noisy_evaluation_replays_the_noise_free_trajectory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let dir = recon_dir(&cfg);
    run_train_recon(&cfg, &dir, |_| {}).unwrap();
    let (model, manifest) = load_model(&dir).unwrap();
    let (_, clean) = run_eval(&cfg, &model, &manifest, PolicyKind::Greedy1, None, EgomotionNoise::off(), 1).unwrap();
    let noise = EgomotionNoise {
        sigma_deg: 5.0,
        mode: NoiseMode::Independent,
    };
    let (summary, noisy) = run_eval(&cfg, &model, &manifest, PolicyKind::Greedy1, None, noise, 1).unwrap();
    assert_eq!(summary.noise, noise);
    for (c, n) in clean.iter().zip(&noisy) {
        assert_eq!(c.record.views, n.record.views);
        // The first view is the reference and is never perturbed.
        assert_eq!(c.scores[0], n.scores[0]);
        assert_eq!(n.record.iou, n.scores.iter().map(|s| s.occupancy_iou).collect::<Vec<_>>());
    }
}

#[test]
fn learned_policy_requires_parameters() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let dir = recon_dir(&cfg);
    run_train_recon(&cfg, &dir, |_| {}).unwrap();
    let (model, manifest) = load_model(&dir).unwrap();
    assert!(run_eval(&cfg, &model, &manifest, PolicyKind::Learned, None, EgomotionNoise::off(), 0).is_err());
    let pdir = policy_dir(&cfg, 0);
    let (policy, log) = run_train_policy(&cfg, &model, 0, &pdir, |_| {}).unwrap();
    assert_eq!(log.len(), cfg.policy.updates);
    let (s, _) = run_eval(&cfg, &model, &manifest, PolicyKind::Learned, Some(&policy), EgomotionNoise::off(), 0).unwrap();
    assert_eq!(s.policy, PolicyKind::Learned);
    let rewards = fs::read_to_string(pdir.join(POLICY_LOG)).unwrap();
    assert_eq!(rewards.lines().count(), cfg.policy.updates + 1);
}

#[test]
fn scene_directory_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let manifest = write_scene_dir(&cfg, &tmp.path().join("scenes")).unwrap();
    let (read_back, scenes) = read_scene_dir(&tmp.path().join("scenes")).unwrap();
    assert_eq!(read_back, manifest);
    let expected = generate_dataset(&cfg).unwrap();
    assert_eq!(scenes.len(), expected.len());
    for (i, s) in &scenes {
        assert_eq!(s, &expected[*i]);
    }
}

#[test]
fn rollouts_write_one_record_per_scene() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let dir = recon_dir(&cfg);
    run_train_recon(&cfg, &dir, |_| {}).unwrap();
    let (model, _) = load_model(&dir).unwrap();
    let scenes: Vec<_> = generate_dataset(&cfg).unwrap().into_iter().enumerate().collect();
    let out = tmp.path().join("episodes.jsonl");
    let records = run_rollouts(&cfg, &model, &scenes, PolicyKind::Oneway, None, 2, &out).unwrap();
    assert_eq!(records.len(), scenes.len());
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), scenes.len() + 1);
    for r in &records {
        assert_eq!(r.views.len(), cfg.eval.views);
        assert!((r.total_return - (r.iou[r.iou.len() - 1] - r.iou[0])).abs() <= 1e-12);
    }
}

#[test]
fn ply_vertex_count_equals_thresholded_voxels() {
    let n = 8;
    let voxels = n * n * n;
    let occupancy: Vec<f32> = (0..voxels).map(|v| ((v * 37) % 101) as f32 / 100.0).collect();
    let ids: Vec<f32> = (0..voxels).map(|v| (v % 3) as f32).collect();
    let data: Vec<f32> = occupancy.iter().chain(&ids).copied().collect();
    let (text, count) = ply_from_tensor(2, n, &data, 0, 0.5, "test").unwrap();
    let expected = occupancy.iter().filter(|&&o| o >= 0.5).count();
    assert_eq!(count, expected);
    assert!(text.contains(&format!("element vertex {expected}\n")));
    let body = text.split("end_header\n").nth(1).unwrap();
    assert_eq!(body.lines().count(), expected);
    assert!(ply_from_tensor(2, n, &data, 2, 0.5, "test").is_err());
}

#[test]
fn most_common_guess_counts_test_labels_of_the_train_mode() {
    let cfg = RunConfig::default();
    let scenes = generate_dataset(&cfg).unwrap();
    let (train, test) = (&scenes[cfg.train_indices()], &scenes[cfg.test_indices()]);
    let acc = most_common_baseline(train, test);
    let mut counts = [0usize; 4];
    train.iter().flat_map(|s| s.categories()).for_each(|c| counts[c.index()] += 1);
    let mode = (0..4).max_by_key(|&i| (counts[i], std::cmp::Reverse(i))).unwrap();
    let labels: Vec<_> = test.iter().flat_map(|s| s.categories()).collect();
    let hits = labels.iter().filter(|c| c.index() == mode).count();
    assert_eq!(acc, hits as f64 / labels.len() as f64);
}

#[test]
fn most_common_guess_is_near_a_quarter_on_a_large_dataset() {
    // Categories are drawn uniformly per object, so the balance only holds up
    // to sampling noise; 600 scenes keep that noise near two points.
    let mut cfg = RunConfig::default();
    cfg.model.grid = 16;
    cfg.model.memory_resolution = 8;
    cfg.dataset.count = 600;
    let scenes = generate_dataset(&cfg).unwrap();
    let acc = most_common_baseline(&scenes[cfg.train_indices()], &scenes[cfg.test_indices()]);
    assert!((acc - 0.25).abs() <= 0.05, "most-common accuracy {acc}");
}
