//! Finite-difference gradient checking.

use rand::Rng as _;

use super::Tensor;
use crate::rng::Rng;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Relative-error bound every differentiable op must meet at f64.
pub const FD_TOLERANCE: f64 = 1e-4;
/// Differences below this are treated as agreement regardless of scale;
/// it only absorbs roundoff on gradients that are exactly zero.
pub const FD_ABS_FLOOR: f64 = 1e-10;

pub fn random_tensor(shape: &[usize], rng: &mut Rng, lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape matches")
}

/// Central differences of `f` around every entry of `x`.
pub fn numeric_grad(x: &Tensor<f64>, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.len())
        .map(|i| {
            let orig = probe.data[i];
            probe.data[i] = orig + FD_STEP;
            let plus = f(&probe);
            probe.data[i] = orig - FD_STEP;
            let minus = f(&probe);
            probe.data[i] = orig;
            (plus - minus) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Largest relative error between two gradients; entries whose absolute
/// difference is below [`FD_ABS_FLOOR`] count as exact.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| {
            let diff = (a - n).abs();
            if diff <= FD_ABS_FLOOR {
                0.0
            } else {
                diff / a.abs().max(n.abs())
            }
        })
        .fold(0.0, f64::max)
}
