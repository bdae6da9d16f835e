//! Invariant suite shared by the `selftest` subcommand and the acceptance
//! tests: finite-difference gradient checks, geometry and renderer
//! oracles, state boundedness, matching against brute force, and file
//! round-trips. Each check reports the quantity it measured next to the
//! bound it must meet.

use nalgebra::Vector3;
use rand::Rng as _;
use serde::Serialize;

use crate::camera::{pose_of, relative_egomotion, CameraModel, Pose, ViewIndex};
use crate::cluster::best_matching;
use crate::error::Result;
use crate::lift::{unproject, unproject_into_reference, warp_to_reference, FeatureVolume, Frame, NUM_FEATURE_CHANNELS};
use crate::memory::{episode_loss, gru_graph, BoundParams, EpisodeBatch, LossWeights, ModelConfig, ModelParams, Targets};
use crate::nn::gradcheck::{max_relative_error, numeric_grad, random_tensor, FD_TOLERANCE};
use crate::nn::{Graph, Tensor, Var};
use crate::render::{march, render};
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::scene::{generate_scene, Category, VoxelScene};
use crate::tensor_io::{read_tns, write_tns};

/// Pixel bound of the projection round trip.
pub const PROJECTION_TOLERANCE_PX: f64 = 0.5;
/// Max abs error of `warp(R)∘warp(R⁻¹)` on smooth fields.
pub const WARP_ROUNDTRIP_TOLERANCE: f64 = 0.05;
/// Mean per-channel abs difference of the warp path vs direct lifting.
pub const WARP_DIRECT_TOLERANCE: f64 = 0.05;
/// Hit-distance bound of the renderer against analytic intersection.
pub const RENDER_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn bound(name: &str, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            passed: value <= limit,
            detail: format!("measured {value:.3e}, bound {limit:.1e}"),
        }
    }
}

/// Voxels within `n/2 − 2` of the grid center. Any rotation about the
/// center keeps their trilinear stencils inside the grid.
pub fn interior_voxels(n: usize) -> Vec<(usize, usize, usize)> {
    let c = (n as f64 - 1.0) / 2.0;
    let r = n as f64 / 2.0 - 2.0;
    let mut out = Vec::new();
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let d = Vector3::new(i as f64 - c, j as f64 - c, k as f64 - c);
                if d.norm() <= r {
                    out.push((i, j, k));
                }
            }
        }
    }
    out
}

/// Projection round trip over every voxel center and all rig views, for
/// grids attached to the view itself and to a fixed reference view.
/// Returns `(max pixel error, max back-projection error in world units)`.
pub fn projection_roundtrip(cam: &CameraModel, n: usize) -> (f64, f64) {
    let reference = pose_of(ViewIndex::new(1, 0).expect("valid"), cam);
    let (f, c) = (cam.focal(), cam.principal_point());
    let (mut px_err, mut world_err) = (0.0f64, 0.0f64);
    for view in ViewIndex::all() {
        let pose = pose_of(view, cam);
        for target in [&pose, &reference] {
            let to_world = target.inverse();
            let from_world = pose.inverse();
            for k in 0..n {
                for j in 0..n {
                    for i in 0..n {
                        let q = Vector3::new(
                            (i as f64 + 0.5) / n as f64 - 0.5,
                            (j as f64 + 0.5) / n as f64 - 0.5,
                            (k as f64 + 0.5) / n as f64 - 0.5 + cam.radius,
                        );
                        let world = to_world.rotation * q + to_world.translation;
                        let p = pose.rotation * world + pose.translation;
                        let expect = (f * p.x / p.z + c, f * p.y / p.z + c);
                        let Some(site) = crate::lift::sample_site(i, j, k, n, &pose, cam, target) else {
                            px_err = f64::INFINITY;
                            continue;
                        };
                        px_err = px_err.max((site.x - expect.0).abs()).max((site.y - expect.1).abs());
                        let back = Vector3::new((site.x - c) * site.z / f, (site.y - c) * site.z / f, site.z);
                        let back_world = from_world.rotation * back + from_world.translation;
                        world_err = world_err.max((back_world - world).norm());
                    }
                }
            }
        }
    }
    (px_err, world_err)
}

fn smooth_field(n: usize, seed: u64) -> FeatureVolume {
    let mut rng = rng_from_seed(seed);
    let mut vol = FeatureVolume::zeros(NUM_FEATURE_CHANNELS, n, Frame::Camera);
    for ch in 0..NUM_FEATURE_CHANNELS {
        let a = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    let q = Vector3::new(i as f64, j as f64, k as f64) / n as f64;
                    let idx = vol.index(ch, i, j, k);
                    vol.data[idx] = 0.5 + 0.4 * (std::f64::consts::TAU * a.dot(&q) + phase).sin();
                }
            }
        }
    }
    vol
}

/// Max abs error of `warp(R⁻¹)∘warp(R)` on smooth fields over interior
/// voxels, for the egomotion from view (1,0) to every other rig view.
pub fn warp_roundtrip_error(cam: &CameraModel, n: usize) -> Result<f64> {
    let field = smooth_field(n, 11);
    let reference = pose_of(ViewIndex::new(1, 0).expect("valid"), cam);
    let interior = interior_voxels(n);
    let mut worst = 0.0f64;
    for view in ViewIndex::all() {
        let ego = relative_egomotion(&reference, &pose_of(view, cam));
        let there = warp_to_reference(&field, &ego, cam)?;
        let mut there_cam = there;
        there_cam.frame = Frame::Camera;
        let back = warp_to_reference(&there_cam, &ego.inverse(), cam)?;
        for &(i, j, k) in &interior {
            for ch in 0..NUM_FEATURE_CHANNELS {
                worst = worst.max((back.get(ch, i, j, k) - field.get(ch, i, j, k)).abs());
            }
        }
    }
    Ok(worst)
}

/// Whether warping by the identity reproduces the volume bit for bit.
pub fn identity_warp_exact(cam: &CameraModel, n: usize) -> Result<bool> {
    let field = smooth_field(n, 5);
    let out = warp_to_reference(&field, &Pose::identity(), cam)?;
    Ok(out.data == field.data)
}

/// Mean abs difference per channel between warp-path and direct lifting
/// over interior voxels of `pairs` random (scene, reference, view) draws.
pub fn warp_vs_direct(cam: &CameraModel, n: usize, pairs: usize, seed: u64) -> Result<[f64; NUM_FEATURE_CHANNELS]> {
    let mut rng = rng_from_seed(seed);
    let interior = interior_voxels(n);
    let views: Vec<ViewIndex> = ViewIndex::all().collect();
    let mut sums = [0.0f64; NUM_FEATURE_CHANNELS];
    let mut count = 0usize;
    for p in 0..pairs {
        let (scene, _) = generate_scene(derive_seed(seed, &[p as u64]), 2, n)?;
        let reference = pose_of(views[rng.random_range(0..views.len())], cam);
        let view = views[rng.random_range(0..views.len())];
        let pose = pose_of(view, cam);
        let rendered = render(&scene, &pose, cam);
        let direct = unproject_into_reference(&rendered, &pose, cam, n, &reference);
        let own = unproject(&rendered, &pose, cam, n, &pose);
        let warped = warp_to_reference(&own, &relative_egomotion(&reference, &pose), cam)?;
        for &(i, j, k) in &interior {
            for (ch, s) in sums.iter_mut().enumerate() {
                *s += (direct.get(ch, i, j, k) - warped.get(ch, i, j, k)).abs();
            }
        }
        count += interior.len();
    }
    Ok(sums.map(|s| s / count as f64))
}

/// Independent slab test: entry parameter of the ray into `[lo, hi]`.
fn analytic_entry(o: &Vector3<f64>, d: &Vector3<f64>, lo: &Vector3<f64>, hi: &Vector3<f64>) -> Option<f64> {
    let t_lo = (lo - o).component_div(d);
    let t_hi = (hi - o).component_div(d);
    let near = t_lo.inf(&t_hi).max().max(0.0);
    let far = t_lo.sup(&t_hi).min();
    (near <= far).then_some(near)
}

/// Max |t_march − t_analytic| over `rays` random rays aimed at random
/// solid blocks of voxels, plus the number of hit/miss disagreements.
pub fn renderer_oracle(rays: usize, seed: u64) -> Result<(f64, usize)> {
    let n = 32;
    let mut rng = rng_from_seed(seed);
    let (mut worst, mut disagreements) = (0.0f64, 0usize);
    let blocks = 10;
    for b in 0..blocks {
        let lo_idx: [usize; 3] = std::array::from_fn(|_| rng.random_range(4..20));
        let hi_idx: [usize; 3] = std::array::from_fn(|a| (lo_idx[a] + rng.random_range(1..9)).min(n - 5));
        let mut instance = vec![0u8; n * n * n];
        for k in lo_idx[2]..=hi_idx[2] {
            for j in lo_idx[1]..=hi_idx[1] {
                for i in lo_idx[0]..=hi_idx[0] {
                    instance[i + n * (j + n * k)] = 1;
                }
            }
        }
        let scene = VoxelScene::from_parts(n, instance, vec![Category::Box], vec![[1.0, 0.0, 0.0]])?;
        let lo = Vector3::from_fn(|a, _| lo_idx[a] as f64 / n as f64 - 0.5);
        let hi = Vector3::from_fn(|a, _| (hi_idx[a] + 1) as f64 / n as f64 - 0.5);
        let count = rays / blocks + usize::from(b < rays % blocks);
        for _ in 0..count {
            let dir0 = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let origin = dir0.normalize() * 1.4;
            let aim = Vector3::from_fn(|a, _| rng.random_range(lo[a] - 0.05..hi[a] + 0.05));
            let dir = (aim - origin).normalize();
            let marched = march(&scene, &origin, &dir).map(|h| h.t);
            match (marched, analytic_entry(&origin, &dir, &lo, &hi)) {
                (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
                (None, None) => {}
                _ => disagreements += 1,
            }
        }
    }
    Ok((worst, disagreements))
}

/// Finite-difference check of a scalar graph with respect to all inputs.
pub fn check_graph(inputs: &[Tensor<f64>], build: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars)?;
    let grads = g.backward(loss)?;
    let mut worst = 0.0f64;
    for (idx, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[idx]).map(|t| t.data.clone()).unwrap_or_else(|| vec![0.0; input.len()]);
        let numeric = numeric_grad(input, |probe| {
            let mut g = Graph::new();
            let vars: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(j, t)| g.param(if j == idx { probe.clone() } else { t.clone() }))
                .collect();
            let loss = build(&mut g, &vars).expect("same graph as the analytic pass");
            g.value(loss).data[0]
        });
        worst = worst.max(max_relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

/// `Σ (a ⊙ weights)`, used to reduce tensors to a scalar with nontrivial
/// upstream gradients.
fn weighted_sum(g: &mut Graph<f64>, a: Var, rng: &mut Rng) -> Result<Var> {
    let shape = g.value(a).shape.clone();
    let w = g.constant(random_tensor(&shape, rng, -1.0, 1.0));
    let prod = g.mul(a, w)?;
    Ok(g.sum(prod))
}

fn small_model(rng: &mut Rng) -> ModelParams<f64> {
    let config = ModelConfig {
        grid: 8,
        memory_resolution: 4,
        hidden: 2,
        embed: 2,
    };
    let mut p = ModelParams::<f64>::zeros(config);
    for t in p.tensors_mut() {
        let shape = t.shape.clone();
        *t = random_tensor(&shape, rng, -0.5, 0.5);
    }
    p
}

fn bind_inputs(vars: &[Var]) -> BoundParams {
    BoundParams {
        vars: vars[..12].try_into().expect("12 parameter vars"),
    }
}

fn small_targets(n: usize, rng: &mut Rng) -> Targets {
    let instance: Vec<u8> = (0..n * n * n)
        .map(|_| match rng.random_range(0..10) {
            0..=1 => 1,
            2..=3 => 2,
            _ => 0,
        })
        .collect();
    Targets {
        n,
        occupancy: instance.iter().map(|&i| i > 0).collect(),
        instance,
        categories: vec![Category::Sphere, Category::Ell],
    }
}

/// Max relative FD error per differentiable component.
pub fn gradient_suite(seed: u64) -> Result<Vec<(String, f64)>> {
    let mut rng = rng_from_seed(seed);
    let mut out = Vec::new();

    let x = random_tensor(&[2, 4, 4, 4], &mut rng, -1.0, 1.0);
    let w = random_tensor(&[3, 2, 3, 3, 3], &mut rng, -0.5, 0.5);
    let b = random_tensor(&[3], &mut rng, -0.5, 0.5);
    let wr = rng_from_seed(derive_seed(seed, &[1]));
    let err = check_graph(&[x, w, b], |g, v| {
        let y = g.conv3d(v[0], v[1], v[2])?;
        weighted_sum(g, y, &mut wr.clone())
    })?;
    out.push(("conv3d".to_string(), err));

    let model = small_model(&mut rng);
    let mut inputs: Vec<Tensor<f64>> = model.tensors().into_iter().cloned().collect();
    inputs.push(random_tensor(&[NUM_FEATURE_CHANNELS, 4, 4, 4], &mut rng, 0.0, 1.0));
    inputs.push(random_tensor(&[2, 4, 4, 4], &mut rng, -0.9, 0.9));
    let wr = rng_from_seed(derive_seed(seed, &[2]));
    let err = check_graph(&inputs, |g, v| {
        let h = gru_graph(g, &bind_inputs(v), v[12], v[13])?;
        weighted_sum(g, h, &mut wr.clone())
    })?;
    out.push(("gru step".to_string(), err));

    let logits = random_tensor(&[1, 3, 3, 3], &mut rng, -3.0, 3.0);
    let target = Tensor::from_vec(&[1, 3, 3, 3], (0..27).map(|_| f64::from(rng.random_range(0..2u8))).collect())?;
    let err = check_graph(&[logits], |g, v| {
        let p = g.sigmoid(v[0]);
        g.bce_weighted(p, &target, 2.5)
    })?;
    out.push(("bce".to_string(), err));

    let emb = random_tensor(&[3, 2, 2, 2], &mut rng, -0.6, 0.6);
    let pairs: Vec<(usize, usize, bool)> = (0..8).flat_map(|a| (a + 1..8).map(move |b| (a, b, (a + b) % 3 == 0))).collect();
    let err = check_graph(&[emb], |g, v| g.contrastive(v[0], pairs.clone(), 1.0))?;
    out.push(("contrastive".to_string(), err));

    let logits = random_tensor(&[4, 2, 2, 2], &mut rng, -2.0, 2.0);
    let groups = vec![vec![0, 1, 2], vec![3, 7], vec![4, 5, 6]];
    let labels = vec![2, 0, 3];
    let err = check_graph(&[logits], |g, v| {
        let m = g.group_mean(v[0], groups.clone())?;
        g.softmax_ce(m, labels.clone())
    })?;
    out.push(("softmax cross-entropy".to_string(), err));

    let model = small_model(&mut rng);
    let targets = small_targets(4, &mut rng);
    let batch = EpisodeBatch {
        inputs: (0..2).map(|_| random_tensor(&[NUM_FEATURE_CHANNELS, 4, 4, 4], &mut rng, 0.0, 1.0)).collect(),
        pairs: vec![(0, 5, true), (3, 9, false), (12, 40, false), (7, 8, true), (22, 63, false)],
        targets,
        class_from_gt_masks: true,
        detach_class_head: false,
        cluster_seed: 0,
    };
    let params: Vec<Tensor<f64>> = model.tensors().into_iter().cloned().collect();
    let config = model.config.clone();
    let err = check_graph(&params, |g, v| Ok(episode_loss(g, &bind_inputs(v), &config, &batch, &LossWeights::default())?.0))?;
    out.push(("2-view episode".to_string(), err));
    Ok(out)
}

/// Largest `|h|` over `rollouts` random-parameter 4-step rollouts from
/// `h₀ = 0` with random inputs.
pub fn gru_boundedness(rollouts: usize, seed: u64) -> Result<f64> {
    let mut worst = 0.0f64;
    for r in 0..rollouts {
        let mut rng = rng_from_seed(derive_seed(seed, &[r as u64]));
        let scale: f64 = rng.random_range(0.1..20.0);
        let config = ModelConfig {
            grid: 8,
            memory_resolution: 4,
            hidden: 3,
            embed: 2,
        };
        let mut p = ModelParams::<f64>::zeros(config);
        for t in p.tensors_mut() {
            let shape = t.shape.clone();
            *t = random_tensor(&shape, &mut rng, -scale, scale);
        }
        let mut g = Graph::new();
        let bound = p.bind(&mut g, false);
        let mut h = g.constant(Tensor::zeros(&[3, 4, 4, 4]));
        for _ in 0..4 {
            let x = g.constant(random_tensor(&[NUM_FEATURE_CHANNELS, 4, 4, 4], &mut rng, -scale, scale));
            h = gru_graph(&mut g, &bound, x, h)?;
            worst = worst.max(g.value(h).max_abs());
        }
    }
    Ok(worst)
}

/// Best total over all injective object→cluster assignments, by padding
/// the table to a square and enumerating every permutation.
fn brute_force_total(table: &[Vec<f64>], objects: usize) -> f64 {
    let m = table.len().max(objects);
    let value = |c: usize, g: usize| if c < table.len() && g < objects { table[c][g] } else { 0.0 };
    let mut perm: Vec<usize> = (0..m).collect();
    let mut best = f64::NEG_INFINITY;
    fn permute(k: usize, perm: &mut Vec<usize>, visit: &mut dyn FnMut(&[usize])) {
        if k == perm.len() {
            visit(perm);
            return;
        }
        for i in k..perm.len() {
            perm.swap(k, i);
            permute(k + 1, perm, visit);
            perm.swap(k, i);
        }
    }
    permute(0, &mut perm, &mut |p| {
        let total: f64 = (0..objects).map(|g| value(p[g], g)).sum();
        best = best.max(total);
    });
    best
}

/// Number of random cases (K ≤ 4 clusters and objects) where the
/// matcher's total or mean IoU differs from brute force. Table entries
/// are multiples of 1/64 so every sum is exact.
pub fn matching_oracle(cases: usize, seed: u64) -> Result<usize> {
    let mut rng = rng_from_seed(seed);
    let mut mismatches = 0;
    for _ in 0..cases {
        let k = rng.random_range(1..=4);
        let objects = rng.random_range(1..=4);
        let table: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..objects).map(|_| f64::from(rng.random_range(0..=64u8)) / 64.0).collect())
            .collect();
        let m = best_matching(&table, objects)?;
        let total: f64 = m.object_iou.iter().sum();
        let brute = brute_force_total(&table, objects);
        let consistent = m
            .cluster_for_object
            .iter()
            .enumerate()
            .all(|(g, c)| m.object_iou[g] == c.map_or(0.0, |c| table[c - 1][g]));
        if total != brute || m.mean_iou != brute / objects as f64 || !consistent {
            mismatches += 1;
        }
    }
    Ok(mismatches)
}

fn file_roundtrips() -> Result<bool> {
    let (scene, _) = generate_scene(7, 2, 32)?;
    let mut buf = Vec::new();
    scene.write_vxg(&mut buf)?;
    let back = VoxelScene::read_vxg(&buf[..])?;
    let data: Vec<f32> = (0..3 * 64).map(|i| (i as f32).sin()).collect();
    let mut tns = Vec::new();
    write_tns(&mut tns, 3, 4, &data)?;
    let (c, n, values) = read_tns(&tns[..])?;
    Ok(back == scene && (c, n) == (3, 4) && values == data)
}

/// Every check, in a fixed order.
pub fn run_all() -> Result<Vec<CheckResult>> {
    let cam = CameraModel::default();
    let mut out = Vec::new();
    for (name, err) in gradient_suite(1)? {
        out.push(CheckResult::bound(&format!("gradient: {name}"), err, FD_TOLERANCE));
    }
    let (px, world) = projection_roundtrip(&cam, 32);
    out.push(CheckResult::bound("projection round trip (px)", px, PROJECTION_TOLERANCE_PX));
    out.push(CheckResult::bound("back-projection (world units)", world, 1e-9));
    out.push(CheckResult::bound("warp round trip", warp_roundtrip_error(&cam, 32)?, WARP_ROUNDTRIP_TOLERANCE));
    out.push(CheckResult {
        name: "identity warp bit-exact".into(),
        passed: identity_warp_exact(&cam, 32)?,
        detail: String::new(),
    });
    let diff = warp_vs_direct(&cam, 32, 20, 3)?;
    out.push(CheckResult::bound(
        "warp vs direct lifting (worst channel mean)",
        diff.iter().copied().fold(0.0, f64::max),
        WARP_DIRECT_TOLERANCE,
    ));
    let (t_err, disagreements) = renderer_oracle(10_000, 4)?;
    out.push(CheckResult::bound("renderer vs analytic ray-box", t_err, RENDER_TOLERANCE));
    out.push(CheckResult {
        name: "renderer hit/miss agreement".into(),
        passed: disagreements == 0,
        detail: format!("{disagreements} disagreements"),
    });
    out.push(CheckResult::bound("GRU state stays in [-1, 1]", gru_boundedness(1000, 5)?, 1.0));
    let mismatches = matching_oracle(100, 6)?;
    out.push(CheckResult {
        name: "matching equals brute force".into(),
        passed: mismatches == 0,
        detail: format!("{mismatches} of 100 cases differ"),
    });
    out.push(CheckResult {
        name: "VXG1 and TNS1 round trips".into(),
        passed: file_roundtrips()?,
        detail: String::new(),
    });
    Ok(out)
}
