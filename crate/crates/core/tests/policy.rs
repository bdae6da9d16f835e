use geomem::camera::{action_mask, ViewIndex};
use geomem::policy::*;

#[test]
fn zero_policy_is_uniform_over_valid() {
    let p = PolicyParams::zeros(2);
    let f = vec![0.3; feature_len(2)];
    let probs = masked_softmax(&p.logits(&f), &[true; 8]).unwrap();
    assert!(probs.iter().all(|&q| (q - 0.125).abs() < 1e-15));
    let mask = action_mask(ViewIndex::new(0, 4).unwrap());
    let probs = masked_softmax(&p.logits(&f), &mask).unwrap();
    for (q, ok) in probs.iter().zip(mask) {
        assert!((q - if ok { 0.2 } else { 0.0 }).abs() < 1e-15);
    }
}

#[test]
fn all_invalid_mask_is_an_error() {
    assert!(masked_softmax(&[0.0; 8], &[false; 8]).is_err());
}

#[test]
fn returns_to_go_accumulate_backwards() {
    assert_eq!(returns_to_go(&[1.0, 2.0, 3.0]), vec![6.0, 5.0, 3.0]);
}

#[test]
fn policy_kind_parses() {
    for k in PolicyKind::ALL {
        assert_eq!(k.name().parse::<PolicyKind>().unwrap(), k);
    }
    assert!("best".parse::<PolicyKind>().is_err());
}

use geomem::camera::{CameraModel, ACTION_DELTAS, NUM_ACTIONS};
use geomem::memory::{episode_forward, reference_targets, ModelConfig, ModelParams};
use geomem::nn::Tensor;
use geomem::rng::rng_from_seed;
use geomem::scene::generate_scene;
use proptest::prelude::*;
use rand::Rng as _;

fn tiny_policy(features: usize) -> PolicyParams {
    PolicyParams {
        hidden: 0,
        weight: Tensor::zeros(&[NUM_ACTIONS, features]),
        bias: Tensor::zeros(&[NUM_ACTIONS]),
    }
}

fn small_model(seed: u64) -> ModelParams<f32> {
    let cfg = ModelConfig {
        grid: 16,
        memory_resolution: 8,
        hidden: 2,
        embed: 2,
    };
    ModelParams::init(cfg, &mut rng_from_seed(seed)).unwrap()
}

#[test]
fn single_large_logit_matches_scalar_softmax() {
    let mut logits = vec![0.0; 8];
    logits[3] = 10.0;
    let probs = masked_softmax(&logits, &[true; 8]).unwrap();
    let expect = 10f64.exp() / (10f64.exp() + 7.0);
    assert!((probs[3] - expect).abs() < 1e-12);
    assert!((probs[0] - 1.0 / (10f64.exp() + 7.0)).abs() < 1e-12);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

proptest! {
    #[test]
    fn masked_softmax_normalises(logits in proptest::collection::vec(-30.0f64..30.0, 8), bits in 1u8..=255) {
        let mask: Vec<bool> = (0..8).map(|i| bits & (1 << i) != 0).collect();
        let probs = masked_softmax(&logits, &mask).unwrap();
        prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        for (p, ok) in probs.iter().zip(&mask) {
            prop_assert!(*ok || *p == 0.0);
        }
    }

    #[test]
    fn returns_telescope(ious in proptest::collection::vec(0.0f64..1.0, 1..8)) {
        let views = vec![geomem::camera::ViewIndex::new(1, 0).unwrap(); ious.len()];
        let rec = EpisodeRecord::from_ious(0, PolicyKind::Random, views, vec![0; ious.len() - 1], ious.clone());
        prop_assert!((rec.total_return - (ious[ious.len() - 1] - ious[0])).abs() <= 1e-12);
        prop_assert_eq!(rec.rewards.len(), ious.len() - 1);
    }
}

#[test]
fn oneway_keeps_its_direction_along_a_ring() {
    let plus_azim = ACTION_DELTAS.iter().position(|&d| d == (0, 1)).unwrap();
    let mut here = ViewIndex::new(1, 0).unwrap();
    let mut azims = vec![here.azim];
    for _ in 0..3 {
        let a = nearest_valid_action(plus_azim, &action_mask(here));
        assert_eq!(a, plus_azim);
        here = here.apply(a).unwrap();
        azims.push(here.azim);
        assert_eq!(here.elev, 1);
    }
    assert_eq!(azims, vec![0, 1, 2, 3]);

    // Through the rollout API: whenever the drawn direction is +azim the
    // path is the same ring walk.
    let model = small_model(1);
    let scene = generate_scene(3, 2, 16).unwrap().0;
    let cam = CameraModel::default();
    let mut seen = false;
    for seed in 0..64 {
        let mut tree = TrajectoryTree::new(&scene, &cam, &model, 4);
        let rec = rollout_policy(PolicyKind::Oneway, &mut tree, 0, ViewIndex::new(1, 0).unwrap(), 4, None, 0, &mut rng_from_seed(seed)).unwrap();
        if ACTION_DELTAS[rec.actions[0]].0 == 0 {
            assert!(rec.actions.iter().all(|&a| a == rec.actions[0]), "ring moves keep the direction");
        }
        if rec.actions[0] == plus_azim {
            seen = true;
            assert_eq!(rec.views.iter().map(|v| (v.elev, v.azim)).collect::<Vec<_>>(), vec![(1, 0), (1, 1), (1, 2), (1, 3)]);
        }
    }
    assert!(seen);
}

#[test]
fn oneway_falls_back_clockwise_at_the_pole_ring() {
    let up = ACTION_DELTAS.iter().position(|&d| d == (1, 0)).unwrap();
    let top = ViewIndex::new(2, 5).unwrap();
    let a = nearest_valid_action(up, &action_mask(top));
    assert!(action_mask(top)[a]);
    assert_eq!(ACTION_DELTAS[a].0, 0);
}

#[test]
fn greedy_one_step_gain_beats_every_sibling() {
    let model = small_model(2);
    let cam = CameraModel::default();
    for s in 0..3u64 {
        let scene = generate_scene(10 + s, 2, 16).unwrap().0;
        let start = ViewIndex::new(1, (s * 5) as u8).unwrap();
        let mut tree = TrajectoryTree::new(&scene, &cam, &model, 4);
        let rec = rollout_policy(PolicyKind::Greedy1, &mut tree, 0, start, 2, None, 0, &mut rng_from_seed(0)).unwrap();
        let targets = reference_targets(&scene, &geomem::camera::pose_of(start, &cam), &cam, 8);
        let off = geomem::camera::EgomotionNoise::off();
        let chosen = rec.iou[1];
        for (_, next) in geomem::camera::neighbors(start) {
            let outs = episode_forward(&scene, &[start, next], &model, &cam, off, 0).unwrap();
            let iou = step_iou(&outs[1], &targets);
            assert!(chosen >= iou, "greedy {chosen} < sibling {iou}");
        }
    }
}

#[test]
fn oracle_return_is_at_least_random_on_average() {
    let model = small_model(3);
    let cam = CameraModel::default();
    let (mut oracle, mut random) = (0.0, 0.0);
    let scenes = 100;
    for s in 0..scenes {
        let scene = generate_scene(1000 + s, 2, 16).unwrap().0;
        let start = start_view(0, s as usize);
        let mut tree = TrajectoryTree::new(&scene, &cam, &model, 4);
        let mut rng = rng_from_seed(s);
        oracle += rollout_policy(PolicyKind::Oracle, &mut tree, 0, start, 4, None, 100, &mut rng).unwrap().total_return;
        random += rollout_policy(PolicyKind::Random, &mut tree, 0, start, 4, None, 0, &mut rng).unwrap().total_return;
    }
    assert!(oracle >= random, "oracle {oracle} < random {random}");
}

/// Two-armed bandit on the first two actions: arm 0 pays 1, arm 1 pays 0.
fn bandit_batch(policy: &PolicyParams, batch: usize, rng: &mut geomem::rng::Rng) -> Vec<(Vec<Decision>, Vec<f64>)> {
    let mask = [true, true, false, false, false, false, false, false];
    let features = vec![1.0];
    (0..batch)
        .map(|_| {
            let (a, probs) = act(policy, &features, &mask, rng, false).unwrap();
            let reward = if a == 0 { 1.0 } else { 0.0 };
            (
                vec![Decision {
                    features: features.clone(),
                    probs,
                    action: a,
                }],
                vec![reward],
            )
        })
        .collect()
}

#[test]
fn bandit_learns_the_better_arm() {
    let mut policy = tiny_policy(1);
    let mut rng = rng_from_seed(4);
    let mask = [true, true, false, false, false, false, false, false];
    let lr = 0.1;
    for _ in 0..500 {
        let episodes = bandit_batch(&policy, 16, &mut rng);
        let (gw, gb) = reinforce_gradient(&policy, &episodes, 0.01);
        for (w, g) in policy.weight.data.iter_mut().zip(&gw.data) {
            *w += lr * g;
        }
        for (w, g) in policy.bias.data.iter_mut().zip(&gb.data) {
            *w += lr * g;
        }
    }
    let probs = masked_softmax(&policy.logits(&[1.0]), &mask).unwrap();
    assert!(probs[0] >= 0.95, "p(better arm) = {}", probs[0]);
}

/// The batch-mean baseline includes the episode itself, which scales the
/// expected estimate by `(B − 1) / B` without changing its direction.
#[test]
fn batch_mean_baseline_only_rescales_the_bandit_gradient() {
    let policy = tiny_policy(1);
    let mut rng = rng_from_seed(5);
    let (batches, b) = (2000, 16);
    let (mut with, mut without) = (Vec::new(), Vec::new());
    for _ in 0..batches {
        let episodes = bandit_batch(&policy, b, &mut rng);
        with.push(reinforce_gradient(&policy, &episodes, 0.0).1.data[0]);
        let plain: f64 = episodes
            .iter()
            .map(|(d, r)| log_prob_grad(&d[0].probs, d[0].action)[0] * r[0])
            .sum::<f64>()
            / b as f64;
        without.push(plain);
    }
    let scale = (b - 1) as f64 / b as f64;
    let diffs: Vec<f64> = with.iter().zip(&without).map(|(w, o)| w - scale * o).collect();
    let mean = diffs.iter().sum::<f64>() / batches as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (batches - 1) as f64;
    let se = (var / batches as f64).sqrt();
    assert!(mean.abs() < 2.0 * se, "mean shift {mean} vs se {se}");
    let exact = 0.25; // ∂E[R]/∂z₀ = p₀(1 − p₀) at p₀ = 1/2
    let est = with.iter().sum::<f64>() / batches as f64;
    assert!((est - scale * exact).abs() < 0.01);
}

/// Three-state, two-step MDP: from s0 action 0 leads to s1 and action 1 to
/// s2; the second action ends the episode.
struct ToyMdp;

impl ToyMdp {
    const MASK: [bool; 8] = [true, true, false, false, false, false, false, false];

    fn features(state: usize) -> Vec<f64> {
        let mut f = vec![0.0; 3];
        f[state] = 1.0;
        f
    }

    fn reward(state: usize, action: usize) -> f64 {
        [[0.2, 0.0], [1.0, 0.0], [0.0, 0.5]][state][action]
    }

    fn probs(policy: &PolicyParams, state: usize) -> Vec<f64> {
        masked_softmax(&policy.logits(&Self::features(state)), &Self::MASK).unwrap()
    }

    fn expected_return(policy: &PolicyParams) -> f64 {
        let p0 = Self::probs(policy, 0);
        (0..2)
            .map(|a| {
                let next = 1 + a;
                let p1 = Self::probs(policy, next);
                p0[a] * (Self::reward(0, a) + (0..2).map(|b| p1[b] * Self::reward(next, b)).sum::<f64>())
            })
            .sum()
    }
}

#[test]
fn policy_gradient_matches_enumerated_finite_differences() {
    let mut policy = tiny_policy(3);
    let mut rng = rng_from_seed(6);
    for w in policy.weight.data.iter_mut().chain(policy.bias.data.iter_mut()) {
        *w = rng.random_range(-0.5..0.5);
    }
    let episodes: Vec<(Vec<Decision>, Vec<f64>)> = (0..100_000)
        .map(|_| {
            let mut state = 0;
            let mut decisions = Vec::new();
            let mut rewards = Vec::new();
            for _ in 0..2 {
                let features = ToyMdp::features(state);
                let (a, probs) = act(&policy, &features, &ToyMdp::MASK, &mut rng, false).unwrap();
                rewards.push(ToyMdp::reward(state, a));
                decisions.push(Decision { features, probs, action: a });
                state = 1 + a;
            }
            (decisions, rewards)
        })
        .collect();
    let (gw, gb) = reinforce_gradient(&policy, &episodes, 0.0);
    let h = 1e-6;
    let mut fd = Vec::new();
    let mut est = Vec::new();
    for a in 0..2 {
        for f in 0..3 {
            let i = a * 3 + f;
            let mut plus = policy.clone();
            plus.weight.data[i] += h;
            let mut minus = policy.clone();
            minus.weight.data[i] -= h;
            fd.push((ToyMdp::expected_return(&plus) - ToyMdp::expected_return(&minus)) / (2.0 * h));
            est.push(gw.data[i]);
        }
        let mut plus = policy.clone();
        plus.bias.data[a] += h;
        let mut minus = policy.clone();
        minus.bias.data[a] -= h;
        fd.push((ToyMdp::expected_return(&plus) - ToyMdp::expected_return(&minus)) / (2.0 * h));
        est.push(gb.data[a]);
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = fd.iter().zip(&est).map(|(a, b)| a - b).collect();
    let rel = norm(&diff) / norm(&fd);
    assert!(rel <= 0.05, "relative error {rel}: fd {fd:?} est {est:?}");
}

#[test]
fn policy_checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = PolicyParams::zeros(2);
    p.weight.data.iter_mut().enumerate().for_each(|(i, w)| *w = (i as f64 * 0.25).sin());
    let stamp = geomem::tensor_io::Stamp {
        config_hash: "abc".into(),
        seed: 1,
    };
    p.save(dir.path(), &stamp).unwrap();
    let (q, _) = PolicyParams::load(dir.path()).unwrap();
    for (a, b) in p.weight.data.iter().zip(&q.weight.data) {
        assert_eq!(*a as f32, *b as f32);
    }
}
