//! The recurrent geometry-aware memory.
//!
//! Each view is rendered, lifted into a 7-channel volume, warped into the
//! frame of the episode's first view and average-pooled to the memory
//! resolution `N_f`. A 3D convolutional GRU fuses it into the state
//!
//! ```text
//! u, r = σ(conv([x, h], W_u)), σ(conv([x, h], W_r))
//! h⁺   = u ∘ h + (1 − u) ∘ tanh(conv([x, r ∘ h], W_h))
//! ```
//!
//! and three 1×1×1 heads decode occupancy, instance embeddings and class
//! logits from `h`.

use std::path::Path;

use nalgebra::Vector3;
use rand::seq::index::sample as sample_indices;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::camera::{pose_of, CameraModel, EgomotionNoise, EgomotionTracker, Pose, ViewIndex};
use crate::cluster::{active_voxels, iou_table, kmeans};
use crate::error::{invalid, Error, Result};
use crate::lift::{unproject, warp_to_reference, FeatureVolume, Frame, CH_SURFACE, NUM_FEATURE_CHANNELS};
use crate::nn::{ConvKernel, Graph, Real, Sgd, Tensor, Var};
use crate::render::{render_with_view, RenderedView};
use crate::rng::{derive_seed, derived_rng, rng_from_seed, stream, Rng};
use crate::scene::{Category, VoxelScene};
use crate::tensor_io::{load_checkpoint, save_checkpoint, take_named, Manifest, Stamp};

pub const NUM_CLASSES: usize = Category::COUNT;
pub const GRU_KERNEL: usize = 3;
/// Initial bias of the update gate, so early training favours retention.
pub const UPDATE_GATE_BIAS: f64 = 1.0;
pub const CHECKPOINT_KIND: &str = "reconstruction";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Unprojection grid resolution `N`.
    pub grid: usize,
    /// Memory resolution `N_f`; must be `N / 2`.
    pub memory_resolution: usize,
    /// GRU state channels `C_h`.
    pub hidden: usize,
    /// Embedding dimension `E`.
    pub embed: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            grid: 32,
            memory_resolution: 16,
            hidden: 8,
            embed: 8,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(crate::scene::MIN_RESOLUTION..=crate::scene::MAX_RESOLUTION).contains(&self.grid) || self.grid % 2 != 0 {
            return Err(invalid(format!("grid must be an even resolution in [16, 64], got {}", self.grid)));
        }
        if self.memory_resolution * 2 != self.grid {
            return Err(invalid(format!(
                "memory_resolution must be grid / 2 = {}, got {}",
                self.grid / 2,
                self.memory_resolution
            )));
        }
        if self.hidden == 0 || self.embed == 0 {
            return Err(invalid("hidden and embed widths must be positive"));
        }
        Ok(())
    }

    pub fn memory_shape(&self) -> [usize; 4] {
        let n = self.memory_resolution;
        [self.hidden, n, n, n]
    }
}

/// GRU kernels and decode heads.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub w_u: ConvKernel<T>,
    pub w_r: ConvKernel<T>,
    pub w_h: ConvKernel<T>,
    pub occupancy: ConvKernel<T>,
    pub embedding: ConvKernel<T>,
    pub logits: ConvKernel<T>,
}

/// Checkpoint names, in [`ModelParams::tensors`] order.
pub const PARAM_NAMES: [&str; 12] = [
    "gru.update.weight",
    "gru.update.bias",
    "gru.reset.weight",
    "gru.reset.bias",
    "gru.candidate.weight",
    "gru.candidate.bias",
    "head.occupancy.weight",
    "head.occupancy.bias",
    "head.embedding.weight",
    "head.embedding.bias",
    "head.logits.weight",
    "head.logits.bias",
];

impl<T: Real> ModelParams<T> {
    /// Glorot-uniform weights, zero biases except the update gate (+1).
    pub fn init(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let (c, inp) = (config.hidden, NUM_FEATURE_CHANNELS + config.hidden);
        let mut w_u = ConvKernel::glorot(c, inp, GRU_KERNEL, rng);
        w_u.bias.data.fill(T::from_f64(UPDATE_GATE_BIAS));
        let w_r = ConvKernel::glorot(c, inp, GRU_KERNEL, rng);
        let w_h = ConvKernel::glorot(c, inp, GRU_KERNEL, rng);
        let occupancy = ConvKernel::glorot(1, c, 1, rng);
        let embedding = ConvKernel::glorot(config.embed, c, 1, rng);
        let logits = ConvKernel::glorot(NUM_CLASSES, c, 1, rng);
        Ok(Self {
            config,
            w_u,
            w_r,
            w_h,
            occupancy,
            embedding,
            logits,
        })
    }

    pub fn zeros(config: ModelConfig) -> Self {
        let (c, inp) = (config.hidden, NUM_FEATURE_CHANNELS + config.hidden);
        Self {
            w_u: ConvKernel::zeros(c, inp, GRU_KERNEL),
            w_r: ConvKernel::zeros(c, inp, GRU_KERNEL),
            w_h: ConvKernel::zeros(c, inp, GRU_KERNEL),
            occupancy: ConvKernel::zeros(1, c, 1),
            embedding: ConvKernel::zeros(config.embed, c, 1),
            logits: ConvKernel::zeros(NUM_CLASSES, c, 1),
            config,
        }
    }

    fn kernels(&self) -> [&ConvKernel<T>; 6] {
        [&self.w_u, &self.w_r, &self.w_h, &self.occupancy, &self.embedding, &self.logits]
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        self.kernels().into_iter().flat_map(|k| [&k.weight, &k.bias]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        [
            &mut self.w_u,
            &mut self.w_r,
            &mut self.w_h,
            &mut self.occupancy,
            &mut self.embedding,
            &mut self.logits,
        ]
        .into_iter()
        .flat_map(|k| [&mut k.weight, &mut k.bias])
        .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            w_u: self.w_u.cast(),
            w_r: self.w_r.cast(),
            w_h: self.w_h.cast(),
            occupancy: self.occupancy.cast(),
            embedding: self.embedding.cast(),
            logits: self.logits.cast(),
        }
    }

    /// Record every parameter on a tape.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> BoundParams {
        let vars: Vec<Var> = self
            .tensors()
            .into_iter()
            .map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect();
        BoundParams {
            vars: vars.try_into().expect("12 parameter tensors"),
        }
    }
}

impl ModelParams<f32> {
    pub fn save(&self, dir: &Path, stamp: &Stamp) -> Result<()> {
        let named: Vec<(&str, &Tensor<f32>)> = PARAM_NAMES.iter().copied().zip(self.tensors()).collect();
        save_checkpoint(dir, CHECKPOINT_KIND, serde_json::to_value(&self.config)?, stamp, &named)
    }

    pub fn load(dir: &Path) -> Result<(Self, Manifest)> {
        let (manifest, mut tensors) = load_checkpoint(dir)?;
        if manifest.kind != CHECKPOINT_KIND {
            return Err(Error::Format(format!(
                "{} holds a {} checkpoint, expected {CHECKPOINT_KIND}",
                dir.display(),
                manifest.kind
            )));
        }
        let config: ModelConfig = serde_json::from_value(manifest.model.clone())?;
        config.validate()?;
        let mut params = ModelParams::zeros(config);
        for (slot, name) in params.tensors_mut().into_iter().zip(PARAM_NAMES) {
            let t = take_named(&mut tensors, name)?;
            if t.shape != slot.shape {
                return Err(Error::Format(format!("tensor {name} has shape {:?}, expected {:?}", t.shape, slot.shape)));
            }
            *slot = t;
        }
        Ok((params, manifest))
    }
}

/// Parameters recorded on a tape, in [`ModelParams::tensors`] order.
#[derive(Debug, Clone, Copy)]
pub struct BoundParams {
    pub vars: [Var; 12],
}

impl BoundParams {
    fn kernel(&self, i: usize) -> (Var, Var) {
        (self.vars[2 * i], self.vars[2 * i + 1])
    }
}

/// One GRU update on a tape.
pub fn gru_graph<T: Real>(g: &mut Graph<T>, p: &BoundParams, x: Var, h: Var) -> Result<Var> {
    let xh = g.concat(x, h)?;
    let (uw, ub) = p.kernel(0);
    let (rw, rb) = p.kernel(1);
    let (cw, cb) = p.kernel(2);
    let u_pre = g.conv3d(xh, uw, ub)?;
    let u = g.sigmoid(u_pre);
    let r_pre = g.conv3d(xh, rw, rb)?;
    let r = g.sigmoid(r_pre);
    let rh = g.mul(r, h)?;
    let xrh = g.concat(x, rh)?;
    let c_pre = g.conv3d(xrh, cw, cb)?;
    let cand = g.tanh(c_pre);
    let keep = g.mul(u, h)?;
    let not_u = g.one_minus(u);
    let write = g.mul(not_u, cand)?;
    g.add(keep, write)
}

/// Decode heads on a tape: `(occupancy probabilities, embeddings, logits)`.
pub fn decode_graph<T: Real>(g: &mut Graph<T>, p: &BoundParams, h: Var) -> Result<(Var, Var, Var)> {
    let (ow, ob) = p.kernel(3);
    let (ew, eb) = p.kernel(4);
    let (lw, lb) = p.kernel(5);
    let occ_pre = g.conv3d(h, ow, ob)?;
    let occ = g.sigmoid(occ_pre);
    let emb = g.conv3d(h, ew, eb)?;
    let logits = g.conv3d(h, lw, lb)?;
    Ok((occ, emb, logits))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryState<T> {
    /// `(C_h, N_f, N_f, N_f)`.
    pub h: Tensor<T>,
    /// Number of views fused so far.
    pub t: usize,
}

impl<T: Real> MemoryState<T> {
    pub fn zeros(config: &ModelConfig) -> Self {
        Self {
            h: Tensor::zeros(&config.memory_shape()),
            t: 0,
        }
    }
}

/// Reinterpret a feature volume as a `(C, N, N, N)` tensor; both are
/// channel-major with x fastest.
pub fn volume_tensor<T: Real>(vol: &FeatureVolume) -> Tensor<T> {
    Tensor {
        shape: vec![vol.channels, vol.n, vol.n, vol.n],
        data: vol.data.iter().map(|&v| T::from_f64(v)).collect(),
    }
}

fn check_input(x: &FeatureVolume, config: &ModelConfig) -> Result<()> {
    if x.frame != Frame::Reference {
        return Err(Error::FrameMismatch);
    }
    if x.channels != NUM_FEATURE_CHANNELS || x.n != config.memory_resolution {
        return Err(Error::ShapeMismatch(format!(
            "memory input must be {NUM_FEATURE_CHANNELS}×{}³, got {}×{}³",
            config.memory_resolution, x.channels, x.n
        )));
    }
    Ok(())
}

/// Fuse one reference-frame, pooled feature volume into the state.
pub fn gru_step<T: Real>(state: &MemoryState<T>, x: &FeatureVolume, params: &ModelParams<T>) -> Result<MemoryState<T>> {
    check_input(x, &params.config)?;
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let xv = g.constant(volume_tensor(x));
    let hv = g.constant(state.h.clone());
    let out = gru_graph(&mut g, &p, xv, hv)?;
    let h = g.value(out).clone();
    debug_assert!(h.max_abs() <= T::one(), "GRU state left [-1, 1]");
    Ok(MemoryState { h, t: state.t + 1 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput {
    pub n: usize,
    /// Occupancy probability per memory voxel, x fastest.
    pub occupancy: Vec<f32>,
    /// `(E, N_f, N_f, N_f)`.
    pub embeddings: Tensor<f32>,
    /// `(NUM_CLASSES, N_f, N_f, N_f)`.
    pub logits: Tensor<f32>,
}

pub fn decode<T: Real>(state: &MemoryState<T>, params: &ModelParams<T>) -> Result<DecodeOutput> {
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let h = g.constant(state.h.clone());
    let (occ, emb, logits) = decode_graph(&mut g, &p, h)?;
    Ok(DecodeOutput {
        n: params.config.memory_resolution,
        occupancy: g.value(occ).data.iter().map(|v| v.as_f64() as f32).collect(),
        embeddings: g.value(emb).cast(),
        logits: g.value(logits).cast(),
    })
}

/// Ground truth expressed in the grid attached to an episode's reference
/// view, at memory resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub n: usize,
    pub occupancy: Vec<bool>,
    /// Instance id per memory voxel (0 = empty).
    pub instance: Vec<u8>,
    pub categories: Vec<Category>,
}

impl Targets {
    pub fn num_objects(&self) -> usize {
        self.categories.len()
    }

    pub fn occupancy_tensor<T: Real>(&self) -> Tensor<T> {
        let n = self.n;
        Tensor {
            shape: vec![1, n, n, n],
            data: self.occupancy.iter().map(|&o| if o { T::one() } else { T::zero() }).collect(),
        }
    }

    pub fn object_voxels(&self, id: u8) -> Vec<usize> {
        self.instance
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == id)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Sample the scene at the `2 N_f` sub-grid of the reference frame and pool
/// by majority: a memory voxel is occupied when at least half of its eight
/// sub-samples are, and takes the most frequent object id among them
/// (lowest id on ties).
pub fn reference_targets(scene: &VoxelScene, reference: &Pose, cam: &CameraModel, nf: usize) -> Targets {
    let fine = 2 * nf;
    let n = scene.resolution();
    let to_world = reference.inverse();
    let coord = |i: usize| (i as f64 + 0.5) / fine as f64 - 0.5;
    let cell = |w: f64| {
        let g = ((w + 0.5) * n as f64).floor();
        if g < 0.0 || g >= n as f64 {
            None
        } else {
            Some(g as usize)
        }
    };
    let sample = |i: usize, j: usize, k: usize| -> u8 {
        let w = to_world.transform_point(&Vector3::new(coord(i), coord(j), coord(k) + cam.radius));
        match (cell(w.x), cell(w.y), cell(w.z)) {
            (Some(a), Some(b), Some(c)) => scene.instance_at(a, b, c),
            _ => 0,
        }
    };
    let voxels = nf * nf * nf;
    let mut occupancy = vec![false; voxels];
    let mut instance = vec![0u8; voxels];
    let k_objects = scene.num_objects();
    let mut counts = vec![0usize; k_objects + 1];
    for k in 0..nf {
        for j in 0..nf {
            for i in 0..nf {
                counts.fill(0);
                for d in 0..8 {
                    let id = sample(2 * i + (d & 1), 2 * j + ((d >> 1) & 1), 2 * k + (d >> 2));
                    counts[id as usize] += 1;
                }
                let filled = 8 - counts[0];
                if filled >= 4 {
                    let v = i + nf * (j + nf * k);
                    occupancy[v] = true;
                    let mut best = 1;
                    for id in 2..=k_objects {
                        if counts[id] > counts[best] {
                            best = id;
                        }
                    }
                    instance[v] = best as u8;
                }
            }
        }
    }
    Targets {
        n: nf,
        occupancy,
        instance,
        categories: scene.categories().to_vec(),
    }
}

/// Render `view`, lift it in its own frame, warp it by `ego` into the
/// reference frame and pool it to memory resolution.
pub fn lift_view(scene: &VoxelScene, view: ViewIndex, cam: &CameraModel, grid: usize, ego: &Pose) -> Result<(RenderedView, FeatureVolume)> {
    let pose = pose_of(view, cam);
    let rendered = render_with_view(scene, &pose, cam, Some(view));
    let own = unproject(&rendered, &pose, cam, grid, &pose);
    let warped = warp_to_reference(&own, ego, cam)?;
    Ok((rendered, warped.avg_pool2()?))
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub view: ViewIndex,
    pub rendered: RenderedView,
    pub decode: DecodeOutput,
}

/// Incremental episode: feed views one at a time. Cloning an observer
/// branches the episode (used by the privileged baselines).
#[derive(Debug, Clone)]
pub struct Observer<'a> {
    scene: &'a VoxelScene,
    cam: &'a CameraModel,
    params: &'a ModelParams<f32>,
    tracker: EgomotionTracker,
    noise_rng: Rng,
    views: Vec<ViewIndex>,
    state: MemoryState<f32>,
    reference: Option<Pose>,
    targets: Option<Targets>,
}

impl<'a> Observer<'a> {
    pub fn new(scene: &'a VoxelScene, cam: &'a CameraModel, params: &'a ModelParams<f32>, noise: EgomotionNoise, noise_seed: u64) -> Self {
        Self {
            scene,
            cam,
            params,
            tracker: EgomotionTracker::new(noise),
            noise_rng: rng_from_seed(noise_seed),
            views: Vec::new(),
            state: MemoryState::zeros(&params.config),
            reference: None,
            targets: None,
        }
    }

    pub fn step(&mut self, view: ViewIndex) -> Result<StepOutput> {
        if let Some(&last) = self.views.last() {
            if !last.is_adjacent(view) {
                return Err(Error::NonAdjacentViews {
                    from: last.to_string(),
                    to: view.to_string(),
                });
            }
        }
        if self.reference.is_none() {
            let reference = pose_of(view, self.cam);
            self.targets = Some(reference_targets(self.scene, &reference, self.cam, self.params.config.memory_resolution));
            self.reference = Some(reference);
        }
        let ego = self.tracker.egomotion_to_reference(view, self.cam, &mut self.noise_rng);
        let (rendered, x) = lift_view(self.scene, view, self.cam, self.params.config.grid, &ego)?;
        self.state = gru_step(&self.state, &x, self.params)?;
        self.views.push(view);
        Ok(StepOutput {
            view,
            rendered,
            decode: decode(&self.state, self.params)?,
        })
    }

    pub fn views(&self) -> &[ViewIndex] {
        &self.views
    }

    pub fn state(&self) -> &MemoryState<f32> {
        &self.state
    }

    pub fn reference(&self) -> Option<&Pose> {
        self.reference.as_ref()
    }

    /// Ground truth in the reference frame; available after the first step.
    pub fn targets(&self) -> Option<&Targets> {
        self.targets.as_ref()
    }

    pub fn scene(&self) -> &VoxelScene {
        self.scene
    }
}

/// Run a whole trajectory and decode after every view.
pub fn episode_forward(
    scene: &VoxelScene,
    trajectory: &[ViewIndex],
    params: &ModelParams<f32>,
    cam: &CameraModel,
    noise: EgomotionNoise,
    noise_seed: u64,
) -> Result<Vec<DecodeOutput>> {
    if trajectory.is_empty() {
        return Err(invalid("trajectory must contain at least one view"));
    }
    let mut obs = Observer::new(scene, cam, params, noise, noise_seed);
    trajectory.iter().map(|&v| obs.step(v).map(|s| s.decode)).collect()
}

/// Random walk of `len` views over valid moves.
pub fn random_trajectory(start: ViewIndex, len: usize, rng: &mut Rng) -> Vec<ViewIndex> {
    let mut out = vec![start];
    while out.len() < len {
        let here = *out.last().expect("non-empty");
        let moves = crate::camera::neighbors(here);
        out.push(moves[rng.random_range(0..moves.len())].1);
    }
    out
}

/// Uniformly random view on the rig.
pub fn random_view(rng: &mut Rng) -> ViewIndex {
    let elev = rng.random_range(0..crate::camera::NUM_ELEVATIONS);
    let azim = rng.random_range(0..crate::camera::NUM_AZIMUTHS);
    ViewIndex::new(elev, azim).expect("in range")
}

/// Draw exactly `per_instance` voxels from every object present in the
/// targets (without replacement when the object is large enough).
pub fn balanced_sample(targets: &Targets, per_instance: usize, rng: &mut Rng) -> Vec<(usize, u8)> {
    let mut out = Vec::new();
    for id in 1..=targets.num_objects() as u8 {
        let voxels = targets.object_voxels(id);
        if voxels.is_empty() {
            continue;
        }
        if voxels.len() >= per_instance {
            for i in sample_indices(rng, voxels.len(), per_instance).into_iter() {
                out.push((voxels[i], id));
            }
        } else {
            for _ in 0..per_instance {
                out.push((voxels[rng.random_range(0..voxels.len())], id));
            }
        }
    }
    out
}

/// Every unordered pair of samples, labelled same/different instance.
pub fn contrastive_pairs(samples: &[(usize, u8)]) -> Vec<(usize, usize, bool)> {
    let mut pairs = Vec::with_capacity(samples.len() * samples.len().saturating_sub(1) / 2);
    for a in 0..samples.len() {
        for b in a + 1..samples.len() {
            pairs.push((samples[a].0, samples[b].0, samples[a].1 == samples[b].1));
        }
    }
    pairs
}

/// Voxel groups and labels for the classification loss. With ground-truth
/// masks each object is a group; otherwise the predicted occupancy is
/// clustered with k = object count and every cluster takes the category
/// of the object it overlaps best.
pub fn classification_groups(
    occupancy: &[f32],
    embeddings: &Tensor<f32>,
    targets: &Targets,
    from_gt_masks: bool,
    seed: u64,
) -> Result<(Vec<Vec<usize>>, Vec<usize>)> {
    let k = targets.num_objects();
    let mut groups = Vec::new();
    let mut labels = Vec::new();
    if from_gt_masks {
        for id in 1..=k as u8 {
            let v = targets.object_voxels(id);
            if !v.is_empty() {
                groups.push(v);
                labels.push(targets.categories[id as usize - 1].index());
            }
        }
        return Ok((groups, labels));
    }
    let active = active_voxels(occupancy);
    if k == 0 || active.len() < k {
        return Ok((groups, labels));
    }
    let clustering = kmeans(embeddings, &active, k, seed)?;
    let table = iou_table(&clustering, &targets.instance, k);
    for (members, row) in clustering.members().into_iter().zip(&table) {
        let best = crate::cluster::argmax(row);
        if row[best] > 0.0 && !members.is_empty() {
            groups.push(members);
            labels.push(targets.categories[best].index());
        }
    }
    Ok((groups, labels))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Weight on the occupied-voxel term of the occupancy BCE; occupied
    /// voxels are a small minority of the memory grid.
    pub occupancy_pos_weight: f64,
    pub lambda_seg: f64,
    pub lambda_cls: f64,
    pub margin: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            occupancy_pos_weight: 3.0,
            lambda_seg: 1.0,
            lambda_cls: 0.1,
            margin: 1.0,
        }
    }
}

/// Loss terms averaged over the views of an episode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LossParts {
    pub total: f64,
    pub bce: f64,
    pub contrastive: f64,
    pub classification: f64,
}

/// Everything an episode loss needs besides the parameters.
#[derive(Debug, Clone)]
pub struct EpisodeBatch<T> {
    /// Lifted, warped, pooled inputs per view.
    pub inputs: Vec<Tensor<T>>,
    pub targets: Targets,
    pub pairs: Vec<(usize, usize, bool)>,
    pub class_from_gt_masks: bool,
    /// Feed the class head a detached copy of the memory.
    pub detach_class_head: bool,
    pub cluster_seed: u64,
}

/// Record the full multi-view loss on a tape; returns the scalar loss
/// variable and the per-term values.
pub fn episode_loss<T: Real>(g: &mut Graph<T>, p: &BoundParams, config: &ModelConfig, batch: &EpisodeBatch<T>, w: &LossWeights) -> Result<(Var, LossParts)> {
    if batch.inputs.is_empty() {
        return Err(invalid("episode has no views"));
    }
    let target = batch.targets.occupancy_tensor::<T>();
    let mut h = g.constant(Tensor::zeros(&config.memory_shape()));
    let mut total: Option<Var> = None;
    let mut parts = LossParts::default();
    let add = |g: &mut Graph<T>, term: Var, weight: f64, total: &mut Option<Var>| -> f64 {
        let value = g.value(term).data[0].as_f64();
        let weighted = if weight == 1.0 { term } else { g.scale(term, T::from_f64(weight)) };
        *total = Some(match *total {
            None => weighted,
            Some(t) => g.add(t, weighted).expect("scalar add"),
        });
        value
    };
    for (t, x) in batch.inputs.iter().enumerate() {
        let xv = g.constant(x.clone());
        h = gru_graph(g, p, xv, h)?;
        let (occ, emb, logits) = decode_graph(g, p, h)?;
        let bce = g.bce_weighted(occ, &target, T::from_f64(w.occupancy_pos_weight))?;
        parts.bce += add(g, bce, 1.0, &mut total);
        if w.lambda_seg > 0.0 && !batch.pairs.is_empty() {
            let c = g.contrastive(emb, batch.pairs.clone(), T::from_f64(w.margin))?;
            parts.contrastive += add(g, c, w.lambda_seg, &mut total);
        }
        if w.lambda_cls > 0.0 {
            let occ_values: Vec<f32> = g.value(occ).data.iter().map(|v| v.as_f64() as f32).collect();
            let (groups, labels) = classification_groups(
                &occ_values,
                &g.value(emb).cast(),
                &batch.targets,
                batch.class_from_gt_masks,
                derive_seed(batch.cluster_seed, &[t as u64]),
            )?;
            if !groups.is_empty() {
                let logits = if batch.detach_class_head {
                    let state = g.value(h).clone();
                    let frozen = g.constant(state);
                    let (lw, lb) = p.kernel(5);
                    g.conv3d(frozen, lw, lb)?
                } else {
                    logits
                };
                let mean = g.group_mean(logits, groups)?;
                let ce = g.softmax_ce(mean, labels)?;
                parts.classification += add(g, ce, w.lambda_cls, &mut total);
            }
        }
    }
    let views = batch.inputs.len() as f64;
    let loss = g.scale(total.expect("at least one term"), T::from_f64(1.0 / views));
    parts.bce /= views;
    parts.contrastive /= views;
    parts.classification /= views;
    parts.total = g.value(loss).data[0].as_f64();
    Ok((loss, parts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// Anneal the learning rate to zero along a half cosine over the run.
    pub cosine_decay: bool,
    pub momentum: f64,
    /// Views per training trajectory.
    pub views: usize,
    pub loss: LossWeights,
    /// Voxels drawn per object for the contrastive loss.
    pub samples_per_instance: usize,
    /// Supervise classification with ground-truth masks instead of
    /// k-means clusters.
    pub class_from_gt_masks: bool,
    /// Train the class head on a detached copy of the memory so the
    /// classification loss cannot reshape the fused state.
    pub detach_class_head: bool,
    /// Egomotion noise applied to the warp during training.
    pub noise: EgomotionNoise,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1500,
            learning_rate: 0.1,
            cosine_decay: true,
            momentum: 0.9,
            views: 4,
            loss: LossWeights::default(),
            samples_per_instance: 24,
            class_from_gt_masks: false,
            detach_class_head: true,
            noise: EgomotionNoise::off(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.views == 0 {
            return Err(invalid("training views must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid("momentum must be in [0, 1)"));
        }
        if !(self.loss.occupancy_pos_weight > 0.0 && self.loss.occupancy_pos_weight.is_finite()) {
            return Err(invalid("occupancy_pos_weight must be positive"));
        }
        if self.loss.lambda_seg < 0.0 || self.loss.lambda_cls < 0.0 || self.loss.margin <= 0.0 {
            return Err(invalid("loss weights must be non-negative and the margin positive"));
        }
        if self.samples_per_instance == 0 {
            return Err(invalid("samples_per_instance must be positive"));
        }
        self.noise.validate()
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainLogEntry {
    pub step: usize,
    pub scene: usize,
    pub loss: f64,
    pub bce: f64,
    pub contrastive: f64,
    pub classification: f64,
    pub grad_norm: f64,
}

/// Assemble the inputs of one training episode.
pub fn prepare_episode<T: Real>(
    scene: &VoxelScene,
    trajectory: &[ViewIndex],
    cam: &CameraModel,
    config: &ModelConfig,
    train: &TrainConfig,
    seed: u64,
) -> Result<EpisodeBatch<T>> {
    let mut tracker = EgomotionTracker::new(train.noise);
    let mut noise_rng = derived_rng(seed, &[stream::NOISE]);
    let mut inputs = Vec::with_capacity(trajectory.len());
    for (i, &view) in trajectory.iter().enumerate() {
        if i > 0 && !trajectory[i - 1].is_adjacent(view) {
            return Err(Error::NonAdjacentViews {
                from: trajectory[i - 1].to_string(),
                to: view.to_string(),
            });
        }
        let ego = tracker.egomotion_to_reference(view, cam, &mut noise_rng);
        let (_, x) = lift_view(scene, view, cam, config.grid, &ego)?;
        inputs.push(volume_tensor(&x));
    }
    let targets = reference_targets(scene, &pose_of(trajectory[0], cam), cam, config.memory_resolution);
    let mut rng = derived_rng(seed, &[stream::TRAIN]);
    let pairs = contrastive_pairs(&balanced_sample(&targets, train.samples_per_instance, &mut rng));
    Ok(EpisodeBatch {
        inputs,
        targets,
        pairs,
        class_from_gt_masks: train.class_from_gt_masks,
        detach_class_head: train.detach_class_head,
        cluster_seed: derive_seed(seed, &[stream::CLUSTER]),
    })
}

/// Loss value and parameter gradients (in [`ModelParams::tensors`] order).
pub fn loss_and_gradients<T: Real>(params: &ModelParams<T>, batch: &EpisodeBatch<T>, w: &LossWeights) -> Result<(LossParts, Vec<Tensor<T>>)> {
    let mut g = Graph::new();
    let p = params.bind(&mut g, true);
    let (loss, parts) = episode_loss(&mut g, &p, &params.config, batch, w)?;
    let mut grads = g.backward(loss)?;
    let out = p
        .vars
        .iter()
        .zip(params.tensors())
        .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(&t.shape)))
        .collect();
    Ok((parts, out))
}

/// Train on random trajectories. Each step draws a scene, a random start
/// view and a random walk, applies the loss at every view and takes one
/// SGD step. `on_log` sees every step's log entry.
pub fn train_reconstruction(
    scenes: &[VoxelScene],
    params: &mut ModelParams<f32>,
    cam: &CameraModel,
    cfg: &TrainConfig,
    seed: u64,
    mut on_log: impl FnMut(&TrainLogEntry) -> Result<()>,
) -> Result<Vec<TrainLogEntry>> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(invalid("training needs at least one scene"));
    }
    let mut opt = Sgd::new(cfg.learning_rate as f32, cfg.momentum as f32);
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        if cfg.cosine_decay {
            let progress = step as f64 / cfg.steps as f64;
            opt.lr = (cfg.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())) as f32;
        }
        let episode_seed = derive_seed(seed, &[stream::TRAIN, step as u64]);
        let mut rng = rng_from_seed(episode_seed);
        let scene_idx = rng.random_range(0..scenes.len());
        let start = random_view(&mut rng);
        let trajectory = random_trajectory(start, cfg.views, &mut rng);
        let batch = prepare_episode::<f32>(&scenes[scene_idx], &trajectory, cam, &params.config, cfg, episode_seed)?;
        let (parts, grads) = loss_and_gradients(params, &batch, &cfg.loss)?;
        let grad_norm = grads
            .iter()
            .flat_map(|g| g.data.iter())
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt();
        if !parts.total.is_finite() || !grad_norm.is_finite() {
            return Err(Error::Diverged {
                step,
                loss: parts.total,
            });
        }
        let grad_refs: Vec<&Tensor<f32>> = grads.iter().collect();
        opt.step(&mut params.tensors_mut(), &grad_refs)?;
        let entry = TrainLogEntry {
            step,
            scene: scene_idx,
            loss: parts.total,
            bce: parts.bce,
            contrastive: parts.contrastive,
            classification: parts.classification,
            grad_norm,
        };
        on_log(&entry)?;
        log.push(entry);
    }
    Ok(log)
}

/// Fixed (non-learned) fusion rules used as comparison baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    Max,
    Average,
}

/// Fuse reference-frame volumes element-wise.
pub fn aggregate_fixed(kind: Aggregator, volumes: &[FeatureVolume]) -> Result<FeatureVolume> {
    let first = volumes.first().ok_or_else(|| invalid("nothing to aggregate"))?;
    let mut out = first.clone();
    for v in &volumes[1..] {
        if v.frame != Frame::Reference || first.frame != Frame::Reference {
            return Err(Error::FrameMismatch);
        }
        if v.data.len() != out.data.len() {
            return Err(Error::ShapeMismatch("aggregated volumes differ in shape".into()));
        }
        for (o, &x) in out.data.iter_mut().zip(&v.data) {
            match kind {
                Aggregator::Max => *o = o.max(x),
                Aggregator::Average => *o += x,
            }
        }
    }
    if kind == Aggregator::Average {
        let inv = 1.0 / volumes.len() as f64;
        out.data.iter_mut().for_each(|o| *o *= inv);
    }
    Ok(out)
}

/// Occupancy read directly off the fused surface channel.
pub fn fixed_occupancy(fused: &FeatureVolume) -> Vec<f32> {
    fused.channel(CH_SURFACE).iter().map(|&v| v.clamp(0.0, 1.0) as f32).collect()
}
