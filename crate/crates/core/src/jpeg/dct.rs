//! Orthonormal 8×8 DCT-II and its inverse.

use std::sync::OnceLock;

/// `basis()[k][m] = a(k) cos((2m+1)kπ/16)`, with `a(0) = √(1/8)`, else `√(2/8)`.
pub fn basis() -> &'static [[f64; 8]; 8] {
    static BASIS: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut c = [[0.0; 8]; 8];
        for (k, row) in c.iter_mut().enumerate() {
            let a = if k == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
            for (m, v) in row.iter_mut().enumerate() {
                *v = a * ((2 * m + 1) as f64 * k as f64 * std::f64::consts::PI / 16.0).cos();
            }
        }
        c
    })
}

/// Forward transform of a row-major 8×8 block: `C · X · Cᵀ`.
pub fn forward(block: &[f64; 64]) -> [f64; 64] {
    let c = basis();
    let mut tmp = [0.0; 64];
    // tmp = C · X
    for k in 0..8 {
        for n in 0..8 {
            tmp[k * 8 + n] = (0..8).map(|m| c[k][m] * block[m * 8 + n]).sum();
        }
    }
    let mut out = [0.0; 64];
    for k in 0..8 {
        for l in 0..8 {
            out[k * 8 + l] = (0..8).map(|n| tmp[k * 8 + n] * c[l][n]).sum();
        }
    }
    out
}

/// Inverse transform: `Cᵀ · F · C`.
pub fn inverse(coeffs: &[f64; 64]) -> [f64; 64] {
    let c = basis();
    let mut tmp = [0.0; 64];
    // tmp = Cᵀ · F
    for m in 0..8 {
        for l in 0..8 {
            tmp[m * 8 + l] = (0..8).map(|k| c[k][m] * coeffs[k * 8 + l]).sum();
        }
    }
    let mut out = [0.0; 64];
    for m in 0..8 {
        for n in 0..8 {
            out[m * 8 + n] = (0..8).map(|l| tmp[m * 8 + l] * c[l][n]).sum();
        }
    }
    out
}
