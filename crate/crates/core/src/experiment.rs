//! Orchestration shared by the command-line subcommands: dataset
//! generation, training runs, rollouts and evaluation, and the files each
//! of them writes. Every artifact carries the config hash, the code
//! version and the seed it was produced with.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::camera::{EgomotionNoise, NoiseMode, ViewIndex};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::memory::{train_reconstruction, ModelParams, Observer, TrainLogEntry};
use crate::metrics::{mean_per_view, percent_increase_curve, score_view, ViewScore};
use crate::policy::{rollout_policy, start_view, train_reinforce, EpisodeRecord, PolicyKind, PolicyLogEntry, PolicyParams, TrajectoryTree};
use crate::rng::{derive_seed, rng_from_seed, stream};
use crate::scene::{generate_scene, Category, VoxelScene};
use crate::tensor_io::{Manifest, Stamp};

pub const SCENES_SCHEMA: &str = "geomem-scenes/1";
pub const TRAIN_LOG_SCHEMA: &str = "geomem-train-log/1";
pub const POLICY_LOG_SCHEMA: &str = "geomem-policy-log/1";
pub const EPISODES_SCHEMA: &str = "geomem-episodes/1";
pub const EVAL_SCHEMA: &str = "geomem-eval/1";
pub const PER_SCENE_SCHEMA: &str = "geomem-per-scene/1";

pub const SCENE_MANIFEST: &str = "scenes.json";
pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const POLICY_LOG: &str = "rewards.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const PER_SCENE_FILE: &str = "per_scene.csv";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub code_version: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(cfg: &RunConfig, seed: u64) -> Self {
        Self {
            config_hash: cfg.hash(),
            code_version: crate::CODE_VERSION.to_string(),
            seed,
        }
    }

    pub fn stamp(&self) -> Stamp {
        Stamp {
            config_hash: self.config_hash.clone(),
            seed: self.seed,
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

/// JSON-lines writer whose first line is a header with the provenance.
pub struct JsonLines {
    out: std::io::BufWriter<fs::File>,
}

impl JsonLines {
    pub fn create(path: &Path, schema: &str, provenance: &Provenance) -> Result<Self> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        let header = serde_json::json!({ "schema": schema, "provenance": provenance });
        writeln!(out, "{}", serde_json::to_string(&header)?)?;
        Ok(Self { out })
    }

    pub fn push<T: Serialize>(&mut self, row: &T) -> Result<()> {
        writeln!(self.out, "{}", serde_json::to_string(row)?)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// Every scene of the configured dataset, in index order.
pub fn generate_dataset(cfg: &RunConfig) -> Result<Vec<VoxelScene>> {
    (0..cfg.dataset.count)
        .map(|i| Ok(generate_scene(cfg.scene_seed(i), cfg.dataset.num_objects, cfg.model.grid)?.0))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub index: usize,
    pub file: String,
    pub seed: u64,
    pub split: String,
    pub categories: Vec<Category>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub schema: String,
    pub provenance: Provenance,
    pub resolution: usize,
    pub scenes: Vec<SceneEntry>,
}

/// Write every scene as `scene_XXXX.vxg` plus `scenes.json`.
pub fn write_scene_dir(cfg: &RunConfig, dir: &Path) -> Result<SceneManifest> {
    fs::create_dir_all(dir)?;
    let train = cfg.train_indices();
    let mut entries = Vec::with_capacity(cfg.dataset.count);
    for (index, scene) in generate_dataset(cfg)?.iter().enumerate() {
        let file = format!("scene_{index:04}.vxg");
        let mut buf = Vec::new();
        scene.write_vxg(&mut buf)?;
        fs::write(dir.join(&file), buf)?;
        entries.push(SceneEntry {
            index,
            file,
            seed: cfg.scene_seed(index),
            split: if train.contains(&index) { "train" } else { "test" }.to_string(),
            categories: scene.categories().to_vec(),
        });
    }
    let manifest = SceneManifest {
        schema: SCENES_SCHEMA.into(),
        provenance: Provenance::new(cfg, cfg.seed),
        resolution: cfg.model.grid,
        scenes: entries,
    };
    write_json(&dir.join(SCENE_MANIFEST), &manifest)?;
    Ok(manifest)
}

/// Scenes listed by a `scenes.json`, as `(index, scene)` pairs.
pub fn read_scene_dir(dir: &Path) -> Result<(SceneManifest, Vec<(usize, VoxelScene)>)> {
    let path = dir.join(SCENE_MANIFEST);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("cannot read {}: {e}", path.display()))))?;
    let manifest: SceneManifest = serde_json::from_str(&text)?;
    if manifest.schema != SCENES_SCHEMA {
        return Err(Error::Format(format!("{} has schema {:?}", path.display(), manifest.schema)));
    }
    let scenes = manifest
        .scenes
        .iter()
        .map(|e| Ok((e.index, VoxelScene::read_vxg(fs::File::open(dir.join(&e.file))?)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, scenes))
}

pub fn recon_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.join("recon")
}

pub fn policy_dir(cfg: &RunConfig, seed: u64) -> PathBuf {
    cfg.output_dir.join("policy").join(format!("seed_{seed}"))
}

/// Train the reconstruction model on the training split, writing the
/// checkpoint and `train_log.jsonl` to `dir`.
pub fn run_train_recon(cfg: &RunConfig, dir: &Path, mut progress: impl FnMut(&TrainLogEntry)) -> Result<(ModelParams<f32>, Vec<TrainLogEntry>)> {
    let provenance = Provenance::new(cfg, cfg.seed);
    let scenes = generate_dataset(cfg)?;
    let train = &scenes[cfg.train_indices()];
    let mut params = ModelParams::init(cfg.model.clone(), &mut rng_from_seed(derive_seed(cfg.seed, &[stream::INIT])))?;
    fs::create_dir_all(dir)?;
    let mut log_file = JsonLines::create(&dir.join(TRAIN_LOG), TRAIN_LOG_SCHEMA, &provenance)?;
    let log = train_reconstruction(train, &mut params, &cfg.camera, &cfg.train, cfg.seed, |e| {
        progress(e);
        log_file.push(e)
    })?;
    log_file.finish()?;
    params.save(dir, &provenance.stamp())?;
    Ok((params, log))
}

pub fn load_model(dir: &Path) -> Result<(ModelParams<f32>, Manifest)> {
    ModelParams::load(dir)
}

/// Train the learned policy for one seed, writing its checkpoint and
/// `rewards.jsonl` to `dir`.
pub fn run_train_policy(
    cfg: &RunConfig,
    model: &ModelParams<f32>,
    seed: u64,
    dir: &Path,
    mut progress: impl FnMut(&PolicyLogEntry),
) -> Result<(PolicyParams, Vec<PolicyLogEntry>)> {
    let provenance = Provenance::new(cfg, seed);
    let scenes = generate_dataset(cfg)?;
    let train = &scenes[cfg.train_indices()];
    fs::create_dir_all(dir)?;
    let mut log_file = JsonLines::create(&dir.join(POLICY_LOG), POLICY_LOG_SCHEMA, &provenance)?;
    let out = train_reinforce(train, model, &cfg.camera, &cfg.policy, cfg.seed, seed, |e| {
        progress(e);
        log_file.push(e)
    })?;
    log_file.finish()?;
    out.0.save(dir, &provenance.stamp())?;
    Ok(out)
}

/// One evaluated episode: the trajectory record and per-view scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeEval {
    pub record: EpisodeRecord,
    pub scores: Vec<ViewScore>,
}

/// Choose a trajectory on the noise-free memory, then score it with the
/// requested egomotion noise applied to the warp.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_scene(
    cfg: &RunConfig,
    model: &ModelParams<f32>,
    scene_index: usize,
    scene: &VoxelScene,
    kind: PolicyKind,
    learned: Option<&PolicyParams>,
    noise: EgomotionNoise,
    seed: u64,
) -> Result<EpisodeEval> {
    let views = cfg.eval.views;
    let mut tree = TrajectoryTree::new(scene, &cfg.camera, model, views);
    let start = start_view(cfg.seed, scene_index);
    let mut rng = rng_from_seed(derive_seed(seed, &[stream::EVAL, scene_index as u64]));
    let mut record = rollout_policy(kind, &mut tree, scene_index, start, views, learned, cfg.policy.oracle_samples, &mut rng)?;
    drop(tree);
    let noise_seed = derive_seed(seed, &[stream::NOISE, scene_index as u64]);
    let mut observer = Observer::new(scene, &cfg.camera, model, noise, noise_seed);
    let mut scores = Vec::with_capacity(views);
    for (t, &view) in record.views.iter().enumerate() {
        let out = observer.step(view)?;
        let targets = observer.targets().expect("set after the first step");
        let cluster_seed = derive_seed(seed, &[stream::CLUSTER, scene_index as u64, t as u64]);
        scores.push(score_view(&out.decode, targets, cfg.eval.overseg_k, cluster_seed)?);
    }
    if !noise.is_inert() {
        // rewards describe what the policy saw; scores describe the noisy run
        let iou: Vec<f64> = scores.iter().map(|s| s.occupancy_iou).collect();
        record = EpisodeRecord::from_ious(record.scene, record.policy, record.views, record.actions, iou);
    }
    Ok(EpisodeEval { record, scores })
}

/// Fraction of test objects whose category equals the most common
/// category among training objects (lowest category index on ties).
pub fn most_common_baseline(train: &[VoxelScene], test: &[VoxelScene]) -> f64 {
    let mut counts = [0usize; Category::COUNT];
    for s in train {
        for c in s.categories() {
            counts[c.index()] += 1;
        }
    }
    let best = (0..Category::COUNT).fold(0, |b, i| if counts[i] > counts[b] { i } else { b });
    let total: usize = test.iter().map(|s| s.num_objects()).sum();
    let hits = test.iter().flat_map(|s| s.categories()).filter(|c| c.index() == best).count();
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub schema: String,
    pub provenance: Provenance,
    /// Config hash recorded in the evaluated checkpoint.
    pub checkpoint_config_hash: String,
    pub policy: PolicyKind,
    pub noise: EgomotionNoise,
    pub scenes: usize,
    pub views: usize,
    /// Mean occupancy IoU after each view.
    pub occupancy_iou: Vec<f64>,
    /// Percent increase of each view's mean IoU over view 1.
    pub percent_increase: Vec<Option<f64>>,
    pub segmentation_iou: Vec<f64>,
    pub classification_accuracy: Vec<f64>,
    /// Accuracy of always guessing the most common training category.
    pub most_common_baseline: f64,
    /// Fraction of scenes whose oversegment-and-merge ends with exactly the
    /// true number of objects, per view.
    pub merge_exact_rate: Vec<f64>,
    /// Fraction of scenes whose per-view IoU never decreases.
    pub nondecreasing_rate: f64,
}

/// Evaluate a policy over the held-out split.
pub fn run_eval(
    cfg: &RunConfig,
    model: &ModelParams<f32>,
    checkpoint: &Manifest,
    kind: PolicyKind,
    learned: Option<&PolicyParams>,
    noise: EgomotionNoise,
    seed: u64,
) -> Result<(EvalSummary, Vec<EpisodeEval>)> {
    noise.validate()?;
    if kind == PolicyKind::Learned && learned.is_none() {
        return Err(crate::error::invalid("the learned policy needs a policy checkpoint"));
    }
    let scenes = generate_dataset(cfg)?;
    let test_range = cfg.test_indices();
    let mut episodes = Vec::with_capacity(test_range.len());
    for i in test_range.clone() {
        episodes.push(evaluate_scene(cfg, model, i, &scenes[i], kind, learned, noise, seed)?);
    }
    let rows: Vec<Vec<ViewScore>> = episodes.iter().map(|e| e.scores.clone()).collect();
    let occupancy_iou = mean_per_view(&rows, |s| s.occupancy_iou);
    let nondecreasing = rows
        .iter()
        .filter(|r| r.windows(2).all(|w| w[1].occupancy_iou >= w[0].occupancy_iou))
        .count();
    let merge_exact_rate = (0..cfg.eval.views)
        .map(|v| {
            episodes
                .iter()
                .filter(|e| e.scores[v].merged_clusters == scenes[e.record.scene].num_objects())
                .count() as f64
                / episodes.len() as f64
        })
        .collect();
    let summary = EvalSummary {
        schema: EVAL_SCHEMA.into(),
        provenance: Provenance::new(cfg, seed),
        checkpoint_config_hash: checkpoint.config_hash.clone(),
        policy: kind,
        noise: if noise.mode == NoiseMode::Off { EgomotionNoise::off() } else { noise },
        scenes: episodes.len(),
        views: cfg.eval.views,
        percent_increase: percent_increase_curve(&occupancy_iou),
        occupancy_iou,
        segmentation_iou: mean_per_view(&rows, |s| s.segmentation_iou),
        classification_accuracy: mean_per_view(&rows, |s| s.classification_accuracy),
        most_common_baseline: most_common_baseline(&scenes[cfg.train_indices()], &scenes[test_range]),
        merge_exact_rate,
        nondecreasing_rate: nondecreasing as f64 / episodes.len().max(1) as f64,
    };
    Ok((summary, episodes))
}

fn view_label(v: &ViewIndex) -> String {
    v.to_string()
}

/// Write `summary.json` and `per_scene.csv` into `dir`.
pub fn write_eval(dir: &Path, summary: &EvalSummary, episodes: &[EpisodeEval]) -> Result<()> {
    write_json(&dir.join(SUMMARY_FILE), summary)?;
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    let p = &summary.provenance;
    let csv_err = |e: csv::Error| Error::Format(format!("csv: {e}"));
    w.write_record([
        "schema",
        "config_hash",
        "code_version",
        "seed",
        "policy",
        "scene",
        "view_number",
        "view",
        "occupancy_iou",
        "segmentation_iou",
        "classification_accuracy",
        "merged_clusters",
        "merge_final_ratio",
    ])
    .map_err(csv_err)?;
    for e in episodes {
        for (t, (view, s)) in e.record.views.iter().zip(&e.scores).enumerate() {
            w.write_record([
                PER_SCENE_SCHEMA.to_string(),
                p.config_hash.clone(),
                p.code_version.clone(),
                p.seed.to_string(),
                summary.policy.to_string(),
                e.record.scene.to_string(),
                (t + 1).to_string(),
                view_label(view),
                format!("{:.6}", s.occupancy_iou),
                format!("{:.6}", s.segmentation_iou),
                format!("{:.6}", s.classification_accuracy),
                s.merged_clusters.to_string(),
                format!("{:.6}", s.merge_final_ratio),
            ])
            .map_err(csv_err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(format!("csv: {e}")))?;
    fs::write(dir.join(PER_SCENE_FILE), bytes)?;
    Ok(())
}

/// Roll a policy out on the given scenes (noise-free) and write the
/// records as JSON lines.
#[allow(clippy::too_many_arguments)]
pub fn run_rollouts(
    cfg: &RunConfig,
    model: &ModelParams<f32>,
    scenes: &[(usize, VoxelScene)],
    kind: PolicyKind,
    learned: Option<&PolicyParams>,
    seed: u64,
    out: &Path,
) -> Result<Vec<EpisodeRecord>> {
    let provenance = Provenance::new(cfg, seed);
    let mut file = JsonLines::create(out, EPISODES_SCHEMA, &provenance)?;
    let mut records = Vec::with_capacity(scenes.len());
    for (index, scene) in scenes {
        let mut tree = TrajectoryTree::new(scene, &cfg.camera, model, cfg.eval.views);
        let mut rng = rng_from_seed(derive_seed(seed, &[stream::EVAL, *index as u64]));
        let r = rollout_policy(
            kind,
            &mut tree,
            *index,
            start_view(cfg.seed, *index),
            cfg.eval.views,
            learned,
            cfg.policy.oracle_samples,
            &mut rng,
        )?;
        file.push(&r)?;
        records.push(r);
    }
    file.finish()?;
    Ok(records)
}

/// Channel names of a decode dump.
pub const DUMP_CHANNELS: [&str; 2] = ["occupancy", "instance"];

/// Two-channel `(2, N_f³)` dump of a decode: occupancy probability and the
/// instance id from oversegment-and-merge (0 = inactive).
pub fn decode_dump(decode: &crate::memory::DecodeOutput, overseg_k: usize, seed: u64) -> Result<Vec<f32>> {
    let voxels = decode.occupancy.len();
    let mut data = Vec::with_capacity(2 * voxels);
    data.extend_from_slice(&decode.occupancy);
    let mut ids = vec![0.0f32; voxels];
    let active = crate::cluster::active_voxels(&decode.occupancy);
    if !active.is_empty() {
        let c = crate::cluster::kmeans(&decode.embeddings, &active, overseg_k.min(active.len()), seed)?;
        let merged = crate::cluster::merge_clusters(&c).clustering;
        for (v, &a) in merged.assignment.iter().enumerate() {
            ids[v] = a as f32;
        }
    }
    data.extend_from_slice(&ids);
    Ok(data)
}

/// Decode dumps after every view of a noise-free episode.
pub fn episode_dumps(cfg: &RunConfig, model: &ModelParams<f32>, scene: &VoxelScene, views: &[ViewIndex], seed: u64) -> Result<Vec<Vec<f32>>> {
    let mut observer = Observer::new(scene, &cfg.camera, model, EgomotionNoise::off(), 0);
    views
        .iter()
        .enumerate()
        .map(|(t, &v)| {
            let out = observer.step(v)?;
            decode_dump(&out.decode, cfg.eval.overseg_k, derive_seed(seed, &[stream::CLUSTER, t as u64]))
        })
        .collect()
}

const PALETTE: [[u8; 3]; 9] = [
    [200, 200, 200],
    [230, 25, 75],
    [60, 180, 75],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
];

/// ASCII PLY of the voxel centers (cube coordinates) whose `channel` value
/// is at least `threshold`, colored by the `instance` channel when the
/// tensor has one. Returns the file text and the vertex count.
pub fn ply_from_tensor(channels: usize, n: usize, data: &[f32], channel: usize, threshold: f32, comment: &str) -> Result<(String, usize)> {
    let voxels = n * n * n;
    if channel >= channels || data.len() != channels * voxels {
        return Err(crate::error::invalid(format!("channel {channel} not in a {channels}-channel tensor")));
    }
    let instance = (channels == DUMP_CHANNELS.len()).then(|| &data[voxels..2 * voxels]);
    let values = &data[channel * voxels..(channel + 1) * voxels];
    let mut body = String::new();
    let mut count = 0;
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let v = i + n * (j + n * k);
                if values[v] < threshold {
                    continue;
                }
                count += 1;
                let p = crate::scene::voxel_center(i, j, k, n)?;
                let id = instance.map_or(0, |ids| ids[v].max(0.0) as usize);
                let [r, g, b] = PALETTE[id % PALETTE.len()];
                body.push_str(&format!("{:.6} {:.6} {:.6} {r} {g} {b}\n", p[0], p[1], p[2]));
            }
        }
    }
    let header = format!(
        "ply\nformat ascii 1.0\ncomment {comment}\nelement vertex {count}\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n"
    );
    Ok((header + &body, count))
}
