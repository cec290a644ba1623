//! ±1 embedding simulator over nonzero AC coefficients.
//!
//! Each nonzero AC coefficient changes independently with the probability
//! `beta` that an optimal ternary code needs to carry `alpha` bits per
//! nonzero AC coefficient. Changes that would create a zero are flipped to
//! the other direction, so the nonzero count never drops.

use rand::Rng;

use crate::error::{ensure, Result};
use crate::jpeg::{nonzero_ac_count, CoefficientImage};
use crate::rng;

pub const MAX_PAYLOAD: f64 = 1.584_962_500_721_156_3; // log2(3)
pub const MAX_CHANGE_RATE: f64 = 2.0 / 3.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbedConfig {
    /// Payload in bits per nonzero AC coefficient.
    pub alpha: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Embedding {
    pub stego: CoefficientImage,
    pub changes: usize,
    pub nonzero_ac: usize,
    pub beta: f64,
}

/// Ternary entropy in bits: `-b log2(b/2) - (1-b) log2(1-b)`.
pub fn ternary_entropy(beta: f64) -> f64 {
    let mut h = 0.0;
    if beta > 0.0 {
        h -= beta * (beta / 2.0).log2();
    }
    if beta < 1.0 {
        h -= (1.0 - beta) * (1.0 - beta).log2();
    }
    h
}

/// Inverts [`ternary_entropy`] on `[0, 2/3]` by bisection.
pub fn payload_to_change_rate(alpha: f64) -> Result<f64> {
    ensure!(
        (0.0..=MAX_PAYLOAD).contains(&alpha),
        "payload {alpha} bpnzAC outside [0, log2 3]"
    );
    if alpha == 0.0 {
        return Ok(0.0);
    }
    if alpha >= MAX_PAYLOAD {
        return Ok(MAX_CHANGE_RATE);
    }
    let (mut lo, mut hi) = (0.0f64, MAX_CHANGE_RATE);
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let h = ternary_entropy(mid);
        if (h - alpha).abs() < 1e-10 {
            break;
        }
        if h < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(mid)
}

pub fn embed(ci: &CoefficientImage, cfg: &EmbedConfig) -> Result<CoefficientImage> {
    Ok(embed_counted(ci, cfg)?.stego)
}

pub fn embed_counted(ci: &CoefficientImage, cfg: &EmbedConfig) -> Result<Embedding> {
    let beta = payload_to_change_rate(cfg.alpha)?;
    let mut stego = ci.clone();
    let mut rng = rng::stream(cfg.seed, 0xE3BED);
    let mut changes = 0;
    if beta > 0.0 {
        for (i, c) in stego.coeffs_mut().iter_mut().enumerate() {
            if !CoefficientImage::is_ac(i) || *c == 0 {
                continue;
            }
            if rng.random::<f64>() >= beta {
                continue;
            }
            let step: i16 = if rng.random::<bool>() { 1 } else { -1 };
            *c = apply_change(*c, step);
            changes += 1;
        }
    }
    Ok(Embedding { stego, changes, nonzero_ac: nonzero_ac_count(ci), beta })
}

/// `value + step`, except that a result of zero (or an i16 overflow) takes
/// the opposite direction.
pub fn apply_change(value: i16, step: i16) -> i16 {
    match value.checked_add(step) {
        Some(0) | None => value - step,
        Some(v) => v,
    }
}

/// Per-coefficient change probability, aligned with `ci.coeffs()`: `beta`
/// on nonzero AC coefficients, zero elsewhere.
pub fn change_probabilities(ci: &CoefficientImage, alpha: f64) -> Result<Vec<f64>> {
    let beta = payload_to_change_rate(alpha)?;
    Ok(ci
        .coeffs()
        .iter()
        .enumerate()
        .map(|(i, &c)| if CoefficientImage::is_ac(i) && c != 0 { beta } else { 0.0 })
        .collect())
}
