//! View selection.
//!
//! Four baselines (random, oneway, 1-step greedy, oracle) and a learned
//! policy. The learned policy pools the memory state to `4³·C_h` values
//! and the current RGB image to `8×8×3`, and maps the concatenation
//! linearly to one logit per move. It is trained with REINFORCE on the
//! per-step increase in occupancy IoU while the reconstruction model is
//! frozen.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::camera::{action_mask, CameraModel, EgomotionNoise, ViewIndex, NUM_ACTIONS, NUM_AZIMUTHS};
use crate::error::{invalid, Error, Result};
use crate::memory::{DecodeOutput, ModelParams, Observer, Targets};
use crate::metrics::voxel_iou;
use crate::nn::Tensor;
use crate::render::RenderedView;
use crate::rng::{derive_seed, rng_from_seed, stream, Rng};
use crate::scene::VoxelScene;
use crate::tensor_io::{load_checkpoint, save_checkpoint, take_named, Manifest, Stamp};

/// Memory branch: average-pool `h` to this many cells per axis.
pub const POOL_3D: usize = 4;
/// Image branch: average-pool the RGB image to this many cells per axis.
pub const POOL_2D: usize = 8;
pub const CHECKPOINT_KIND: &str = "policy";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Random,
    Oneway,
    Greedy1,
    Oracle,
    Learned,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Random,
        PolicyKind::Oneway,
        PolicyKind::Greedy1,
        PolicyKind::Oracle,
        PolicyKind::Learned,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Random => "random",
            PolicyKind::Oneway => "oneway",
            PolicyKind::Greedy1 => "greedy1",
            PolicyKind::Oracle => "oracle",
            PolicyKind::Learned => "learned",
        }
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| invalid(format!("unknown policy {s:?} (random|oneway|greedy1|oracle|learned)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    /// Views per episode, including the start view.
    pub views: usize,
    /// Episodes per REINFORCE update.
    pub batch: usize,
    pub updates: usize,
    pub learning_rate: f64,
    /// Weight of the entropy bonus; 0 disables it.
    pub entropy_bonus: f64,
    /// Random trajectories the oracle chooses from.
    pub oracle_samples: usize,
    /// Use at most this many training scenes for policy training.
    pub max_train_scenes: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            views: 4,
            batch: 16,
            updates: 150,
            learning_rate: 0.01,
            entropy_bonus: 0.01,
            oracle_samples: 100,
            max_train_scenes: 48,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.views < 2 {
            return Err(invalid("policy episodes need at least 2 views"));
        }
        if self.batch == 0 || self.oracle_samples == 0 || self.max_train_scenes == 0 {
            return Err(invalid("batch, oracle_samples and max_train_scenes must be positive"));
        }
        if !(self.learning_rate > 0.0) || self.entropy_bonus < 0.0 {
            return Err(invalid("learning_rate must be positive and entropy_bonus non-negative"));
        }
        Ok(())
    }
}

/// Linear policy over pooled memory and image features.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub hidden: usize,
    /// `(NUM_ACTIONS, features)`.
    pub weight: Tensor<f64>,
    /// `(NUM_ACTIONS)`.
    pub bias: Tensor<f64>,
}

pub fn feature_len(hidden: usize) -> usize {
    hidden * POOL_3D.pow(3) + 3 * POOL_2D * POOL_2D
}

impl PolicyParams {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            hidden,
            weight: Tensor::zeros(&[NUM_ACTIONS, feature_len(hidden)]),
            bias: Tensor::zeros(&[NUM_ACTIONS]),
        }
    }

    pub fn logits(&self, features: &[f64]) -> Vec<f64> {
        let f = features.len();
        (0..NUM_ACTIONS)
            .map(|a| {
                self.bias.data[a]
                    + self.weight.data[a * f..(a + 1) * f]
                        .iter()
                        .zip(features)
                        .map(|(w, x)| w * x)
                        .sum::<f64>()
            })
            .collect()
    }

    pub fn save(&self, dir: &Path, stamp: &Stamp) -> Result<()> {
        let w = self.weight.cast::<f32>();
        let b = self.bias.cast::<f32>();
        // stored as 1-voxel records: C = actions·features, N = 1
        let flat_w = Tensor::from_vec(&[w.len()], w.data)?;
        save_checkpoint(
            dir,
            CHECKPOINT_KIND,
            serde_json::json!({ "hidden": self.hidden, "features": feature_len(self.hidden), "actions": NUM_ACTIONS }),
            stamp,
            &[("policy.weight", &flat_w), ("policy.bias", &b)],
        )
    }

    pub fn load(dir: &Path) -> Result<(Self, Manifest)> {
        let (manifest, mut tensors) = load_checkpoint(dir)?;
        if manifest.kind != CHECKPOINT_KIND {
            return Err(Error::Format(format!("{} is not a policy checkpoint", dir.display())));
        }
        let hidden = manifest.model["hidden"]
            .as_u64()
            .ok_or_else(|| Error::Format("policy manifest lacks hidden width".into()))? as usize;
        let w = take_named(&mut tensors, "policy.weight")?;
        let b = take_named(&mut tensors, "policy.bias")?;
        let mut p = PolicyParams::zeros(hidden);
        if w.len() != p.weight.len() || b.len() != p.bias.len() {
            return Err(Error::Format("policy tensor sizes disagree with the manifest".into()));
        }
        p.weight.data = w.data.iter().map(|&v| v as f64).collect();
        p.bias.data = b.data.iter().map(|&v| v as f64).collect();
        Ok((p, manifest))
    }
}

/// Pooled memory (`4³·C_h`) followed by pooled RGB (`8·8·3`).
pub fn policy_features(h: &Tensor<f32>, rgb: &RenderedView) -> Vec<f64> {
    let (c, n) = (h.shape[0], h.shape[1]);
    let cell = n / POOL_3D;
    let mut out = Vec::with_capacity(feature_len(c));
    let plane = n * n * n;
    let norm3 = 1.0 / (cell * cell * cell) as f64;
    for ch in 0..c {
        for bz in 0..POOL_3D {
            for by in 0..POOL_3D {
                for bx in 0..POOL_3D {
                    let mut acc = 0.0f64;
                    for z in bz * cell..(bz + 1) * cell {
                        for y in by * cell..(by + 1) * cell {
                            let row = ch * plane + (z * n + y) * n;
                            for x in bx * cell..(bx + 1) * cell {
                                acc += h.data[row + x] as f64;
                            }
                        }
                    }
                    out.push(acc * norm3);
                }
            }
        }
    }
    let s = rgb.size;
    let cell2 = s / POOL_2D;
    let norm2 = 1.0 / (cell2 * cell2) as f64;
    for ch in 0..3 {
        for by in 0..POOL_2D {
            for bx in 0..POOL_2D {
                let mut acc = 0.0f64;
                for v in by * cell2..(by + 1) * cell2 {
                    for u in bx * cell2..(bx + 1) * cell2 {
                        acc += rgb.rgb[rgb.pixel(u, v)][ch] as f64;
                    }
                }
                out.push(acc * norm2);
            }
        }
    }
    out
}

/// Softmax over valid actions; invalid actions get probability 0.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    let m = logits
        .iter()
        .zip(mask)
        .filter(|(_, &ok)| ok)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(invalid("no valid action"));
    }
    let exps: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(&l, &ok)| if ok { (l - m).exp() } else { 0.0 })
        .collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}

/// Draw from a categorical distribution.
pub fn sample_categorical(probs: &[f64], rng: &mut Rng) -> usize {
    let mut u: f64 = rng.random();
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        last = i;
        if u < p {
            return i;
        }
        u -= p;
    }
    last
}

/// Pick an action: sample from the masked softmax, or take its argmax
/// (lowest index on ties) when `greedy`.
pub fn act(policy: &PolicyParams, features: &[f64], mask: &[bool], rng: &mut Rng, greedy: bool) -> Result<(usize, Vec<f64>)> {
    let probs = masked_softmax(&policy.logits(features), mask)?;
    let a = if greedy {
        let mut best = None;
        for (i, &p) in probs.iter().enumerate() {
            if mask[i] && best.is_none_or(|b: usize| p > probs[b]) {
                best = Some(i);
            }
        }
        best.expect("mask checked by masked_softmax")
    } else {
        sample_categorical(&probs, rng)
    };
    Ok((a, probs))
}

/// Per-episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub scene: usize,
    pub policy: PolicyKind,
    pub views: Vec<ViewIndex>,
    pub actions: Vec<usize>,
    /// Occupancy IoU after each view.
    pub iou: Vec<f64>,
    /// `R_t = IoU_{t+1} − IoU_t`, one per action.
    pub rewards: Vec<f64>,
    /// `Σ R_t`.
    pub total_return: f64,
}

impl EpisodeRecord {
    pub fn from_ious(scene: usize, policy: PolicyKind, views: Vec<ViewIndex>, actions: Vec<usize>, iou: Vec<f64>) -> Self {
        let rewards: Vec<f64> = iou.windows(2).map(|w| w[1] - w[0]).collect();
        let total_return = rewards.iter().sum();
        Self {
            scene,
            policy,
            views,
            actions,
            iou,
            rewards,
            total_return,
        }
    }
}

/// Start view shared by every policy on a scene: the middle elevation
/// ring with an azimuth drawn from the scene's seed.
pub fn start_view(root_seed: u64, scene: usize) -> ViewIndex {
    let mut rng = rng_from_seed(derive_seed(root_seed, &[stream::START, scene as u64]));
    ViewIndex::new(1, rng.random_range(0..NUM_AZIMUTHS)).expect("valid start view")
}

/// Occupancy IoU of a decode against the episode's ground truth.
pub fn step_iou(decode: &DecodeOutput, targets: &Targets) -> f64 {
    voxel_iou(&decode.occupancy, &targets.occupancy, crate::cluster::OCCUPANCY_THRESHOLD).expect("matching grids")
}

/// Node of a trajectory tree: the observer after the views on the path.
#[derive(Debug, Clone)]
struct Node<'a> {
    observer: Option<Observer<'a>>,
    features: Vec<f64>,
    iou: f64,
}

/// Memoises noise-free episode prefixes of one scene. With the model
/// frozen and egomotion exact, the memory after a view sequence is a pure
/// function of that sequence.
pub struct TrajectoryTree<'a> {
    scene: &'a VoxelScene,
    cam: &'a CameraModel,
    model: &'a ModelParams<f32>,
    max_len: usize,
    nodes: HashMap<Vec<ViewIndex>, Node<'a>>,
}

impl<'a> TrajectoryTree<'a> {
    pub fn new(scene: &'a VoxelScene, cam: &'a CameraModel, model: &'a ModelParams<f32>, max_len: usize) -> Self {
        Self {
            scene,
            cam,
            model,
            max_len,
            nodes: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn ensure(&mut self, path: &[ViewIndex]) -> Result<()> {
        if path.is_empty() {
            return Err(invalid("empty trajectory"));
        }
        if self.nodes.contains_key(path) {
            return Ok(());
        }
        let mut observer = if path.len() == 1 {
            Observer::new(self.scene, self.cam, self.model, EgomotionNoise::off(), 0)
        } else {
            self.ensure(&path[..path.len() - 1])?;
            self.nodes[&path[..path.len() - 1]]
                .observer
                .clone()
                .expect("inner nodes keep their observer")
        };
        let output = observer.step(*path.last().expect("non-empty"))?;
        let targets = observer.targets().expect("set after first step");
        let iou = step_iou(&output.decode, targets);
        let features = policy_features(&observer.state().h, &output.rendered);
        let keep = path.len() < self.max_len;
        self.nodes.insert(
            path.to_vec(),
            Node {
                observer: keep.then_some(observer),
                features,
                iou,
            },
        );
        Ok(())
    }

    pub fn iou(&mut self, path: &[ViewIndex]) -> Result<f64> {
        self.ensure(path)?;
        Ok(self.nodes[path].iou)
    }

    pub fn features(&mut self, path: &[ViewIndex]) -> Result<&[f64]> {
        self.ensure(path)?;
        Ok(&self.nodes[path].features)
    }

    /// Ground truth of episodes starting at `start`.
    pub fn targets(&mut self, start: ViewIndex) -> Result<Targets> {
        self.ensure(&[start])?;
        Ok(self.nodes[&vec![start]]
            .observer
            .as_ref()
            .and_then(|o| o.targets().cloned())
            .expect("start node keeps its observer"))
    }
}

/// Valid direction closest to `preferred` in the circular action order,
/// trying clockwise before counter-clockwise at equal distance.
pub fn nearest_valid_action(preferred: usize, mask: &[bool; NUM_ACTIONS]) -> usize {
    for d in 0..=NUM_ACTIONS / 2 {
        for cand in [(preferred + d) % NUM_ACTIONS, (preferred + NUM_ACTIONS - d) % NUM_ACTIONS] {
            if mask[cand] {
                return cand;
            }
        }
    }
    unreachable!("every rig view has a valid move")
}

fn valid_actions(view: ViewIndex) -> Vec<usize> {
    action_mask(view)
        .iter()
        .enumerate()
        .filter(|(_, &ok)| ok)
        .map(|(a, _)| a)
        .collect()
}

/// Roll out one policy for `views` views from `start`. Privileged
/// baselines read the ground-truth IoU through the tree.
pub fn rollout_policy(
    kind: PolicyKind,
    tree: &mut TrajectoryTree<'_>,
    scene_id: usize,
    start: ViewIndex,
    views: usize,
    learned: Option<&PolicyParams>,
    oracle_samples: usize,
    rng: &mut Rng,
) -> Result<EpisodeRecord> {
    let mut path = vec![start];
    let mut actions = Vec::new();
    match kind {
        PolicyKind::Oracle => {
            let mut best: Option<(f64, Vec<ViewIndex>, Vec<usize>)> = None;
            for _ in 0..oracle_samples {
                let mut p = vec![start];
                let mut acts = Vec::new();
                while p.len() < views {
                    let valid = valid_actions(*p.last().expect("non-empty"));
                    let a = valid[rng.random_range(0..valid.len())];
                    acts.push(a);
                    p.push(p.last().expect("non-empty").apply(a).expect("valid"));
                }
                let ret = tree.iou(&p)? - tree.iou(&p[..1])?;
                if best.as_ref().is_none_or(|b| ret > b.0) {
                    best = Some((ret, p, acts));
                }
            }
            let (_, p, acts) = best.expect("oracle_samples > 0");
            path = p;
            actions = acts;
        }
        _ => {
            let mut direction = None;
            while path.len() < views {
                let here = *path.last().expect("non-empty");
                let mask = action_mask(here);
                let a = match kind {
                    PolicyKind::Random => {
                        let valid = valid_actions(here);
                        valid[rng.random_range(0..valid.len())]
                    }
                    PolicyKind::Oneway => {
                        let d = *direction.get_or_insert_with(|| {
                            let valid = valid_actions(here);
                            valid[rng.random_range(0..valid.len())]
                        });
                        nearest_valid_action(d, &mask)
                    }
                    PolicyKind::Greedy1 => {
                        let mut best: Option<(usize, f64)> = None;
                        for a in valid_actions(here) {
                            let mut next = path.clone();
                            next.push(here.apply(a).expect("valid"));
                            let iou = tree.iou(&next)?;
                            if best.is_none_or(|(_, b)| iou > b) {
                                best = Some((a, iou));
                            }
                        }
                        best.expect("at least one valid move").0
                    }
                    PolicyKind::Learned => {
                        let policy = learned.ok_or_else(|| invalid("the learned policy needs policy parameters"))?;
                        let features = tree.features(&path)?.to_vec();
                        act(policy, &features, &mask, rng, true)?.0
                    }
                    PolicyKind::Oracle => unreachable!(),
                };
                actions.push(a);
                path.push(here.apply(a).expect("valid action"));
            }
        }
    }
    let iou = (1..=path.len()).map(|t| tree.iou(&path[..t])).collect::<Result<Vec<_>>>()?;
    Ok(EpisodeRecord::from_ious(scene_id, kind, path, actions, iou))
}

/// Gradient of `log π(a)` with respect to the logits under a masked
/// softmax: `onehot(a) − π`.
pub fn log_prob_grad(probs: &[f64], action: usize) -> Vec<f64> {
    probs
        .iter()
        .enumerate()
        .map(|(i, &p)| if i == action { 1.0 - p } else { -p })
        .collect()
}

/// Entropy of a (masked) distribution and its gradient with respect to the
/// logits: `∂H/∂z_i = −π_i (log π_i + H)`.
pub fn entropy_and_grad(probs: &[f64]) -> (f64, Vec<f64>) {
    let h: f64 = -probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>();
    let g = probs
        .iter()
        .map(|&p| if p > 0.0 { -p * (p.ln() + h) } else { 0.0 })
        .collect();
    (h, g)
}

/// One sampled decision, kept for the gradient.
#[derive(Debug, Clone)]
pub struct Decision {
    pub features: Vec<f64>,
    pub probs: Vec<f64>,
    pub action: usize,
}

/// Undiscounted return-to-go per step.
pub fn returns_to_go(rewards: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc += rewards[t];
        out[t] = acc;
    }
    out
}

/// REINFORCE with a batch-mean baseline. `episodes[b]` lists decisions
/// and their rewards; the advantage at step `t` is the return-to-go minus
/// the batch mean return-to-go at `t`. Returns `(∂J/∂W, ∂J/∂b)` for
/// `J = mean_b Σ_t log π(a_t)·A_t + β·mean_{b,t} H_t`.
pub fn reinforce_gradient(policy: &PolicyParams, episodes: &[(Vec<Decision>, Vec<f64>)], entropy_bonus: f64) -> (Tensor<f64>, Tensor<f64>) {
    let mut gw = Tensor::zeros(&policy.weight.shape);
    let mut gb = Tensor::zeros(&policy.bias.shape);
    if episodes.is_empty() {
        return (gw, gb);
    }
    let horizon = episodes.iter().map(|(d, _)| d.len()).max().unwrap_or(0);
    let rtg: Vec<Vec<f64>> = episodes.iter().map(|(_, r)| returns_to_go(r)).collect();
    let baseline: Vec<f64> = (0..horizon)
        .map(|t| {
            let vals: Vec<f64> = rtg.iter().filter_map(|g| g.get(t).copied()).collect();
            vals.iter().sum::<f64>() / vals.len().max(1) as f64
        })
        .collect();
    let b = episodes.len() as f64;
    let decisions: usize = episodes.iter().map(|(d, _)| d.len()).sum();
    let f = policy.weight.shape[1];
    for ((decs, _), g) in episodes.iter().zip(&rtg) {
        for (t, d) in decs.iter().enumerate() {
            let adv = g[t] - baseline[t];
            let lp = log_prob_grad(&d.probs, d.action);
            let (_, eg) = entropy_and_grad(&d.probs);
            for a in 0..NUM_ACTIONS {
                let coeff = adv * lp[a] / b + entropy_bonus * eg[a] / decisions as f64;
                if coeff == 0.0 {
                    continue;
                }
                gb.data[a] += coeff;
                for (w, x) in gw.data[a * f..(a + 1) * f].iter_mut().zip(&d.features) {
                    *w += coeff * x;
                }
            }
        }
    }
    (gw, gb)
}

/// One line of the policy-training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyLogEntry {
    pub update: usize,
    pub mean_return: f64,
    pub mean_entropy: f64,
    pub grad_norm: f64,
}

/// Train the learned policy with the reconstruction model frozen.
pub fn train_reinforce(
    scenes: &[VoxelScene],
    model: &ModelParams<f32>,
    cam: &CameraModel,
    cfg: &PolicyConfig,
    root_seed: u64,
    policy_seed: u64,
    mut on_log: impl FnMut(&PolicyLogEntry) -> Result<()>,
) -> Result<(PolicyParams, Vec<PolicyLogEntry>)> {
    cfg.validate()?;
    let scenes = &scenes[..scenes.len().min(cfg.max_train_scenes)];
    if scenes.is_empty() {
        return Err(invalid("policy training needs at least one scene"));
    }
    let mut trees: Vec<TrajectoryTree<'_>> = scenes.iter().map(|s| TrajectoryTree::new(s, cam, model, cfg.views)).collect();
    let mut policy = PolicyParams::zeros(model.config.hidden);
    let mut log = Vec::with_capacity(cfg.updates);
    for update in 0..cfg.updates {
        let mut rng = rng_from_seed(derive_seed(policy_seed, &[stream::POLICY, update as u64]));
        let mut episodes = Vec::with_capacity(cfg.batch);
        let mut total_return = 0.0;
        let mut entropy = 0.0;
        let mut count = 0usize;
        for _ in 0..cfg.batch {
            let si = rng.random_range(0..scenes.len());
            let tree = &mut trees[si];
            let mut path = vec![start_view(root_seed, si)];
            let mut decisions = Vec::with_capacity(cfg.views - 1);
            let mut rewards = Vec::with_capacity(cfg.views - 1);
            while path.len() < cfg.views {
                let here = *path.last().expect("non-empty");
                let features = tree.features(&path)?.to_vec();
                let (a, probs) = act(&policy, &features, &action_mask(here), &mut rng, false)?;
                entropy += entropy_and_grad(&probs).0;
                count += 1;
                let before = tree.iou(&path)?;
                path.push(here.apply(a).expect("masked action is valid"));
                rewards.push(tree.iou(&path)? - before);
                decisions.push(Decision {
                    features,
                    probs,
                    action: a,
                });
            }
            total_return += rewards.iter().sum::<f64>();
            episodes.push((decisions, rewards));
        }
        let (gw, gb) = reinforce_gradient(&policy, &episodes, cfg.entropy_bonus);
        let grad_norm = gw.data.iter().chain(&gb.data).map(|v| v * v).sum::<f64>().sqrt();
        if !grad_norm.is_finite() {
            return Err(Error::Diverged {
                step: update,
                loss: grad_norm,
            });
        }
        for (w, g) in policy.weight.data.iter_mut().zip(&gw.data) {
            *w += cfg.learning_rate * g;
        }
        for (w, g) in policy.bias.data.iter_mut().zip(&gb.data) {
            *w += cfg.learning_rate * g;
        }
        let entry = PolicyLogEntry {
            update,
            mean_return: total_return / cfg.batch as f64,
            mean_entropy: entropy / count.max(1) as f64,
            grad_norm,
        };
        on_log(&entry)?;
        log.push(entry);
    }
    Ok((policy, log))
}
