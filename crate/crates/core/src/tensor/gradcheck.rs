//! Central finite-difference checker used by the op tests.

use rand::Rng;

use super::{Shape4, Tensor4};

pub const STEP: f64 = 1e-3;

/// Maximum relative error between `analytic` and central differences of
/// `f`, where `f(i, v)` evaluates the objective with element `i` set to `v`.
/// Relative error is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn check_gradient(values: &[f64], analytic: &[f64], f: impl Fn(usize, f64) -> f64) -> f64 {
    assert_eq!(values.len(), analytic.len());
    let mut worst = 0.0f64;
    for (i, (&v, &a)) in values.iter().zip(analytic).enumerate() {
        let numeric = (f(i, v + STEP) - f(i, v - STEP)) / (2.0 * STEP);
        let denom = a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((a - numeric).abs() / denom);
    }
    worst
}

pub fn random_tensor(rng: &mut impl Rng, shape: Shape4) -> Tensor4<f64> {
    Tensor4::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0))
}
