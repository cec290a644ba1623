//! Gabor-residual histogram features.
//!
//! Each kernel of a bank of even-symmetric 8×8 Gabor filters is correlated
//! with the decompressed image; residuals are quantized, truncated to
//! `[-T, T]` and histogrammed separately for each JPEG phase of the residual
//! grid. The 64 phases are merged into 25 classes that are invariant under
//! reflections of the 8×8 block.

use std::path::Path;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::binio::{read_file, write_file, Reader, Writer};
use crate::error::{ensure, Error, Result};
use crate::jpeg::{dct, CoefficientImage, QuantTable, RealImage};

pub const KERNEL_SIZE: usize = 8;
pub const PHASE_CLASSES: usize = 25;
pub const DEFAULT_SCALES: [f64; 4] = [0.5, 0.75, 1.0, 1.25];
pub const DEFAULT_ORIENTATIONS: usize = 16;
pub const DEFAULT_TRUNCATION: u32 = 4;

/// Wavelength / sigma ratio and aspect ratio of the Gabor envelope.
const SIGMA_PER_WAVELENGTH: f64 = 0.56;
const ASPECT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct GaborBank {
    kernels: Vec<[f64; 64]>,
    scales: Vec<f64>,
    orientations: usize,
}

impl GaborBank {
    /// One kernel per `(scale, orientation)`, scale-major. Orientations are
    /// `k·π/n_orient`; `θ` and `θ + π` give the same even kernel.
    pub fn new(scales: &[f64], n_orient: usize) -> Result<Self> {
        ensure!(n_orient >= 1, "gabor bank needs at least one orientation");
        ensure!(!scales.is_empty(), "gabor bank needs at least one scale");
        ensure!(scales.iter().all(|s| s.is_finite() && *s > 0.0), "gabor scales must be positive, got {scales:?}");
        let mut kernels = Vec::with_capacity(scales.len() * n_orient);
        for &sigma in scales {
            for o in 0..n_orient {
                let theta = o as f64 * std::f64::consts::PI / n_orient as f64;
                kernels.push(gabor_kernel(sigma, theta));
            }
        }
        Ok(Self { kernels, scales: scales.to_vec(), orientations: n_orient })
    }

    pub fn kernels(&self) -> &[[f64; 64]] {
        &self.kernels
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn orientations(&self) -> usize {
        self.orientations
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }
}

impl Default for GaborBank {
    fn default() -> Self {
        Self::new(&DEFAULT_SCALES, DEFAULT_ORIENTATIONS).expect("default bank")
    }
}

/// Even-symmetric Gabor on the centred 8×8 grid, L2-normalized and then
/// made zero-mean.
fn gabor_kernel(sigma: f64, theta: f64) -> [f64; 64] {
    let lambda = sigma / SIGMA_PER_WAVELENGTH;
    let (s, c) = theta.sin_cos();
    let mut k = [0.0; 64];
    for y in 0..KERNEL_SIZE {
        for x in 0..KERNEL_SIZE {
            let (u, v) = (x as f64 - 3.5, y as f64 - 3.5);
            let xr = u * c + v * s;
            let yr = -u * s + v * c;
            let envelope = (-(xr * xr + ASPECT * ASPECT * yr * yr) / (2.0 * sigma * sigma)).exp();
            k[y * KERNEL_SIZE + x] = envelope * (2.0 * std::f64::consts::PI * xr / lambda).cos();
        }
    }
    let norm = k.iter().map(|v| v * v).sum::<f64>().sqrt();
    k.iter_mut().for_each(|v| *v /= norm);
    let mean = k.iter().sum::<f64>() / 64.0;
    k.iter_mut().for_each(|v| *v -= mean);
    k
}

/// Quantization and truncation of the residuals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GfrConfig {
    pub q: f64,
    pub truncation: u32,
}

impl GfrConfig {
    /// `q = 2 · median(quant table) / 8`.
    pub fn for_qtable(qt: &QuantTable) -> Self {
        Self { q: 2.0 * qt.median() / 8.0, truncation: DEFAULT_TRUNCATION }
    }

    pub fn bins(&self) -> usize {
        2 * self.truncation as usize + 1
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.q.is_finite() && self.q > 0.0, "quantization step must be positive, got {}", self.q);
        Ok(())
    }
}

/// `n_scales · n_orientations · 25 · (2T + 1)`.
pub fn feature_dim(bank: &GaborBank, cfg: &GfrConfig) -> usize {
    bank.len() * PHASE_CLASSES * cfg.bins()
}

/// Merged class of JPEG phase `(a, b)`.
pub fn phase_class(a: usize, b: usize) -> usize {
    let fold = |p: usize| p.min((8 - p) % 8);
    fold(a % 8) * 5 + fold(b % 8)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Residuals of one kernel over the valid region, `(h - 7) × (w - 7)`.
fn residuals(img: &RealImage, kernel: &[f64; 64]) -> Vec<f64> {
    let (h, w) = (img.height(), img.width());
    let (rh, rw) = (h - KERNEL_SIZE + 1, w - KERNEL_SIZE + 1);
    let px = img.values();
    let mut out = vec![0.0; rh * rw];
    for i in 0..rh {
        for j in 0..rw {
            let mut acc = 0.0;
            for u in 0..KERNEL_SIZE {
                let row = &px[(i + u) * w + j..(i + u) * w + j + KERNEL_SIZE];
                for (v, &p) in row.iter().enumerate() {
                    acc += kernel[u * KERNEL_SIZE + v] * p as f64;
                }
            }
            out[i * rw + j] = acc;
        }
    }
    out
}

fn check_image(img: &RealImage) -> Result<()> {
    ensure!(
        img.width().is_multiple_of(8) && img.height().is_multiple_of(8) && img.width() >= 8 && img.height() >= 8,
        "gfr features need dimensions that are positive multiples of 8, got {}x{}",
        img.width(),
        img.height()
    );
    Ok(())
}

/// Raw (unnormalized) histograms: for each kernel, class and bin, the sum
/// of the sample weights (1 when `weights` is `None`). Also returns the
/// residual sample count of each class.
pub fn histograms(
    img: &RealImage,
    bank: &GaborBank,
    cfg: &GfrConfig,
    weights: Option<&[Vec<f64>]>,
) -> Result<(Vec<f64>, [usize; PHASE_CLASSES])> {
    check_image(img)?;
    cfg.validate()?;
    let rw = img.width() - KERNEL_SIZE + 1;
    let bins = cfg.bins();
    let t = cfg.truncation as f64;
    let mut counts = [0usize; PHASE_CLASSES];
    for i in 0..img.height() - KERNEL_SIZE + 1 {
        for j in 0..rw {
            counts[phase_class(i, j)] += 1;
        }
    }
    let per_kernel: Vec<Vec<f64>> = bank
        .kernels()
        .par_iter()
        .enumerate()
        .map(|(k, kernel)| {
            let mut hist = vec![0.0; PHASE_CLASSES * bins];
            for (idx, r) in residuals(img, kernel).into_iter().enumerate() {
                let (i, j) = (idx / rw, idx % rw);
                let bin = ((r / cfg.q).round().clamp(-t, t) + t) as usize;
                let weight = weights.map_or(1.0, |w| w[k][idx]);
                hist[phase_class(i, j) * bins + bin] += weight;
            }
            hist
        })
        .collect();
    Ok((per_kernel.concat(), counts))
}

/// Divides each class histogram by the number of residual samples in that
/// class. For unweighted histograms this is L1 normalization.
fn normalize(mut hist: Vec<f64>, counts: &[usize; PHASE_CLASSES], bins: usize) -> FeatureVector {
    for (c, chunk) in hist.chunks_mut(bins).enumerate() {
        let n = counts[c % PHASE_CLASSES] as f64;
        chunk.iter_mut().for_each(|v| *v /= n);
    }
    FeatureVector { values: hist }
}

pub fn extract(img: &RealImage, bank: &GaborBank, cfg: &GfrConfig) -> Result<FeatureVector> {
    let (hist, counts) = histograms(img, bank, cfg, None)?;
    Ok(normalize(hist, &counts, cfg.bins()))
}

/// Spreads per-coefficient change probabilities into the pixel domain.
/// Pixel `(y, x)` gets the average of its block's probabilities weighted
/// by `q_kl · |f_kl(y mod 8, x mod 8)|`, the magnitude of the pixel change
/// a ±1 change of that coefficient causes.
pub fn pixel_change_map(change_probs: &[f64], width: usize, height: usize, qt: &QuantTable) -> Result<Vec<f64>> {
    ensure!(width.is_multiple_of(8) && height.is_multiple_of(8), "coefficient grid must be whole blocks, got {width}x{height}");
    ensure!(
        change_probs.len() == width * height,
        "change map has {} entries for a {width}x{height} coefficient grid",
        change_probs.len()
    );
    ensure!(
        change_probs.iter().all(|p| (0.0..=1.0).contains(p)),
        "change probabilities must lie in [0, 1]"
    );
    let basis = dct::basis();
    let mut impact = [[0.0f64; 64]; 64];
    for m in 0..8 {
        for n in 0..8 {
            for k in 0..8 {
                for l in 0..8 {
                    impact[m * 8 + n][k * 8 + l] = qt.get(k, l) as f64 * (basis[k][m] * basis[l][n]).abs();
                }
            }
        }
    }
    let bw = width / 8;
    let mut out = vec![0.0; width * height];
    for y in 0..height {
        for x in 0..width {
            let block = ((y / 8) * bw + x / 8) * 64;
            let row = &impact[(y % 8) * 8 + x % 8];
            let total: f64 = row.iter().sum();
            let acc: f64 = row.iter().zip(&change_probs[block..block + 64]).map(|(a, p)| a * p).sum();
            out[y * width + x] = acc / total;
        }
    }
    Ok(out)
}

/// Selection-channel-aware variant of [`extract`]. `change_probs` is laid
/// out like [`CoefficientImage::coeffs`]. Each residual sample contributes
/// the `|kernel|`-weighted average of the pixel change map under its
/// support instead of 1, so a uniform map `c` yields `c` times the plain
/// features.
pub fn extract_sca(
    img: &RealImage,
    bank: &GaborBank,
    cfg: &GfrConfig,
    change_probs: &[f64],
    qt: &QuantTable,
) -> Result<FeatureVector> {
    check_image(img)?;
    let (h, w) = (img.height(), img.width());
    let delta = pixel_change_map(change_probs, w, h, qt)?;
    let (rh, rw) = (h - KERNEL_SIZE + 1, w - KERNEL_SIZE + 1);
    let weights: Vec<Vec<f64>> = bank
        .kernels()
        .par_iter()
        .map(|kernel| {
            let abs: Vec<f64> = kernel.iter().map(|v| v.abs()).collect();
            let total: f64 = abs.iter().sum();
            let mut out = vec![0.0; rh * rw];
            for i in 0..rh {
                for j in 0..rw {
                    let mut acc = 0.0;
                    for u in 0..KERNEL_SIZE {
                        for v in 0..KERNEL_SIZE {
                            acc += abs[u * KERNEL_SIZE + v] * delta[(i + u) * w + j + v];
                        }
                    }
                    out[i * rw + j] = acc / total;
                }
            }
            out
        })
        .collect();
    let (hist, counts) = histograms(img, bank, cfg, Some(&weights))?;
    Ok(normalize(hist, &counts, cfg.bins()))
}

/// Ground-truth change map of the ±1 simulator: `beta` on nonzero AC
/// coefficients of the cover, zero elsewhere.
pub fn simulator_change_map(cover: &CoefficientImage, beta: f64) -> Vec<f64> {
    cover
        .coeffs()
        .iter()
        .enumerate()
        .map(|(i, &c)| if CoefficientImage::is_ac(i) && c != 0 { beta } else { 0.0 })
        .collect()
}

/// Identifies the extractor configuration in feature-file headers.
pub fn config_hash(bank: &GaborBank, cfg: &GfrConfig, sca: bool) -> u64 {
    let mut h = Sha256::new();
    h.update(b"gfr");
    for s in bank.scales() {
        h.update(s.to_le_bytes());
    }
    h.update((bank.orientations() as u64).to_le_bytes());
    h.update(cfg.q.to_le_bytes());
    h.update(cfg.truncation.to_le_bytes());
    h.update([sca as u8]);
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

const MAGIC: &[u8; 4] = b"STGF";
const KIND: &str = "feature";
pub const FEATURE_FILE_VERSION: u16 = 1;

/// Row-major feature table: one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub dim: usize,
    pub config_hash: u64,
    pub data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(dim: usize, config_hash: u64, data: Vec<f32>) -> Result<Self> {
        ensure!(dim > 0, "feature dimension must be positive");
        ensure!(data.len().is_multiple_of(dim), "{} values do not form rows of length {dim}", data.len());
        Ok(Self { dim, config_hash, data })
    }

    pub fn from_rows(rows: &[Vec<f32>], config_hash: u64) -> Result<Self> {
        ensure!(!rows.is_empty(), "feature table needs at least one row");
        let dim = rows[0].len();
        ensure!(rows.iter().all(|r| r.len() == dim), "feature rows differ in length");
        Self::new(dim, config_hash, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(MAGIC)
            .u16(FEATURE_FILE_VERSION)
            .u32(self.dim as u32)
            .u32(self.rows() as u32)
            .u64(self.config_hash);
        for &v in &self.data {
            w.f32(v);
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, KIND);
        r.magic(MAGIC)?;
        r.version(FEATURE_FILE_VERSION)?;
        let dim = r.u32()? as usize;
        let count = r.u32()? as usize;
        let config_hash = r.u64()?;
        if dim == 0 {
            return Err(Error::format(KIND, "zero feature dimension"));
        }
        let n = dim.checked_mul(count).ok_or_else(|| Error::format(KIND, "size overflow"))?;
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(r.f32()?);
        }
        r.expect_end()?;
        Self::new(dim, config_hash, data)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.encode())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&read_file(path.as_ref())?)
    }
}

/// One `0`/`1` per line.
pub fn labels_to_text(labels: &[usize]) -> String {
    labels.iter().map(|l| format!("{l}\n")).collect()
}

pub fn parse_labels(text: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        match line.trim() {
            "" => {}
            "0" => out.push(0),
            "1" => out.push(1),
            other => return Err(Error::Parse { offset, message: format!("label must be 0 or 1, got `{other}`") }),
        }
        offset += line.len();
    }
    Ok(out)
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[usize]) -> Result<()> {
    write_file(path.as_ref(), labels_to_text(labels).as_bytes())
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let bytes = read_file(path.as_ref())?;
    let text = String::from_utf8(bytes).map_err(|e| Error::format("label", e.to_string()))?;
    parse_labels(&text)
}

#[cfg(test)]
mod tests;
