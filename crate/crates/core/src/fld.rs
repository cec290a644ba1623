//! Random-subspace Fisher linear discriminant ensemble.
//!
//! Each base learner sees a uniformly drawn subset of `d_sub` features,
//! projects onto `w = (S_w + λI)⁻¹(μ₁ − μ₀)` and thresholds the projection
//! where its training error is smallest. The ensemble probability is the
//! fraction of learners voting stego.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rayon::prelude::*;

use crate::binio::{read_file, write_file, Reader, Writer};
use crate::error::{ensure, Error, Result};
use crate::gfr::FeatureMatrix;
use crate::rng;

pub const DEFAULT_LEARNERS: usize = 51;
pub const DEFAULT_MAX_SUBSPACE: usize = 300;
pub const DEFAULT_LAMBDA_SCALE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleConfig {
    pub learners: usize,
    /// `None` means `min(dim, 300)`.
    pub d_sub: Option<usize>,
    /// Ridge strength relative to the scatter: each learner uses
    /// `λ = lambda_scale · trace(S_w) / d_sub`.
    pub lambda_scale: f64,
    pub seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self { learners: DEFAULT_LEARNERS, d_sub: None, lambda_scale: DEFAULT_LAMBDA_SCALE, seed: 0 }
    }
}

impl EnsembleConfig {
    pub fn subspace_dim(&self, dim: usize) -> usize {
        self.d_sub.unwrap_or(dim.min(DEFAULT_MAX_SUBSPACE))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseLearner {
    /// Sorted feature indices.
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
    /// Votes stego iff the projection exceeds this.
    pub threshold: f64,
    /// Ridge term actually added to the scatter.
    pub lambda: f64,
}

impl BaseLearner {
    pub fn project(&self, x: &[f32]) -> f64 {
        self.indices.iter().zip(&self.weights).map(|(&i, w)| w * x[i] as f64).sum()
    }

    pub fn vote(&self, x: &[f32]) -> bool {
        self.project(x) > self.threshold
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    pub dim: usize,
    pub d_sub: usize,
    pub lambda_scale: f64,
    pub learners: Vec<BaseLearner>,
}

fn check_training_set(features: &FeatureMatrix, labels: &[usize]) -> Result<()> {
    ensure!(
        features.rows() == labels.len(),
        "{} feature rows but {} labels",
        features.rows(),
        labels.len()
    );
    ensure!(labels.iter().all(|&l| l <= 1), "labels must be 0 (cover) or 1 (stego)");
    ensure!(
        labels.contains(&0) && labels.contains(&1),
        "training needs both classes, got only class {}",
        labels.first().copied().unwrap_or(0)
    );
    Ok(())
}

pub fn train_fld(features: &FeatureMatrix, labels: &[usize], cfg: &EnsembleConfig) -> Result<EnsembleModel> {
    check_training_set(features, labels)?;
    let dim = features.dim;
    let d_sub = cfg.subspace_dim(dim);
    ensure!(cfg.learners >= 1, "ensemble needs at least one learner");
    ensure!((1..=dim).contains(&d_sub), "subspace dimension {d_sub} outside 1..={dim}");
    ensure!(cfg.lambda_scale.is_finite() && cfg.lambda_scale >= 0.0, "lambda scale must be non-negative");
    let learners = (0..cfg.learners)
        .into_par_iter()
        .map(|j| {
            let mut r = rng::stream(cfg.seed, j as u64);
            let mut indices = index::sample(&mut r, dim, d_sub).into_vec();
            indices.sort_unstable();
            fit_learner(features, labels, indices, cfg.lambda_scale).map_err(|message| Error::Numeric { learner: j, message })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EnsembleModel { dim, d_sub, lambda_scale: cfg.lambda_scale, learners })
}

fn fit_learner(
    features: &FeatureMatrix,
    labels: &[usize],
    indices: Vec<usize>,
    lambda_scale: f64,
) -> std::result::Result<BaseLearner, String> {
    let d = indices.len();
    let class_matrix = |class: usize| {
        let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        DMatrix::from_fn(rows.len(), d, |r, c| features.row(rows[r])[indices[c]] as f64)
    };
    let (x0, x1) = (class_matrix(0), class_matrix(1));
    let mean = |x: &DMatrix<f64>| -> DVector<f64> { x.row_mean().transpose() };
    let (mu0, mu1) = (mean(&x0), mean(&x1));
    let centered = |x: DMatrix<f64>, mu: &DVector<f64>| {
        let mut x = x;
        for mut row in x.row_iter_mut() {
            row -= mu.transpose();
        }
        x
    };
    let (c0, c1) = (centered(x0, &mu0), centered(x1, &mu1));
    let mut scatter = c0.transpose() * &c0 + c1.transpose() * &c1;
    let lambda = lambda_scale * scatter.trace() / d as f64;
    for i in 0..d {
        scatter[(i, i)] += lambda;
    }
    let chol = scatter.cholesky().ok_or("within-class scatter is singular after regularization")?;
    let w = chol.solve(&(&mu1 - &mu0));
    if w.iter().any(|v| !v.is_finite()) {
        return Err("non-finite discriminant weights".into());
    }
    let mut learner = BaseLearner { indices, weights: w.as_slice().to_vec(), threshold: 0.0, lambda };
    let projections: Vec<f64> = (0..labels.len()).map(|i| learner.project(features.row(i))).collect();
    learner.threshold = best_threshold(&projections, labels);
    Ok(learner)
}

/// Threshold with the fewest training errors for the rule "stego iff
/// projection > t". Candidates are midpoints between consecutive distinct
/// projections plus ±∞; among equally good candidates the middle one wins.
pub fn best_threshold(projections: &[f64], labels: &[usize]) -> f64 {
    let mut order: Vec<usize> = (0..projections.len()).collect();
    order.sort_by(|&a, &b| projections[a].total_cmp(&projections[b]));
    let n = order.len();
    let total_stego = labels.iter().filter(|&&l| l == 1).count();
    // Everything above the threshold is called stego: errors are the covers.
    let mut errors = n - total_stego;
    let mut candidates = vec![(errors, f64::NEG_INFINITY)];
    for k in 0..n {
        if labels[order[k]] == 1 {
            errors += 1;
        } else {
            errors -= 1;
        }
        let here = projections[order[k]];
        let t = if k + 1 == n {
            f64::INFINITY
        } else {
            let next = projections[order[k + 1]];
            if next == here {
                continue;
            }
            0.5 * (here + next)
        };
        candidates.push((errors, t));
    }
    let best = candidates.iter().map(|c| c.0).min().expect("at least one candidate");
    let tied: Vec<f64> = candidates.iter().filter(|c| c.0 == best).map(|c| c.1).collect();
    tied[tied.len() / 2]
}

impl EnsembleModel {
    fn check_dim(&self, x: &[f32]) -> Result<()> {
        ensure!(x.len() == self.dim, "feature has {} values, model expects {}", x.len(), self.dim);
        Ok(())
    }

    pub fn votes(&self, x: &[f32]) -> Result<Vec<bool>> {
        self.check_dim(x)?;
        Ok(self.learners.iter().map(|l| l.vote(x)).collect())
    }

    /// Fraction of learners voting stego.
    pub fn predict_proba(&self, x: &[f32]) -> Result<f64> {
        let votes = self.votes(x)?;
        Ok(votes.iter().filter(|&&v| v).count() as f64 / votes.len() as f64)
    }

    pub fn predict_all(&self, features: &FeatureMatrix) -> Result<Vec<f64>> {
        (0..features.rows()).map(|i| self.predict_proba(features.row(i))).collect()
    }

    /// Training-set error of each base learner on `features`.
    pub fn learner_errors(&self, features: &FeatureMatrix, labels: &[usize]) -> Result<Vec<f64>> {
        check_training_set(features, labels)?;
        ensure!(features.dim == self.dim, "feature dimension {} != model {}", features.dim, self.dim);
        Ok(self
            .learners
            .iter()
            .map(|l| {
                let wrong = (0..labels.len()).filter(|&i| l.vote(features.row(i)) != (labels[i] == 1)).count();
                wrong as f64 / labels.len() as f64
            })
            .collect())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(MAGIC)
            .u16(ENSEMBLE_VERSION)
            .u32(self.dim as u32)
            .u32(self.learners.len() as u32)
            .u32(self.d_sub as u32)
            .f64(self.lambda_scale);
        for l in &self.learners {
            w.f64(l.lambda).f64(l.threshold);
            for &i in &l.indices {
                w.u32(i as u32);
            }
            for &v in &l.weights {
                w.f64(v);
            }
        }
        w.finish_with_crc()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut header = Reader::new(bytes, KIND);
        header.magic(MAGIC)?;
        header.version(ENSEMBLE_VERSION)?;
        let mut r = Reader::with_crc(bytes, KIND)?;
        r.magic(MAGIC)?;
        r.version(ENSEMBLE_VERSION)?;
        let dim = r.u32()? as usize;
        let count = r.u32()? as usize;
        let d_sub = r.u32()? as usize;
        let lambda_scale = r.f64()?;
        if d_sub == 0 || d_sub > dim || count == 0 {
            return Err(Error::format(KIND, format!("bad header: dim {dim}, learners {count}, d_sub {d_sub}")));
        }
        let mut learners = Vec::with_capacity(count);
        for j in 0..count {
            let lambda = r.f64()?;
            let threshold = r.f64()?;
            let indices = (0..d_sub).map(|_| r.u32().map(|i| i as usize)).collect::<Result<Vec<_>>>()?;
            if indices.iter().any(|&i| i >= dim) {
                return Err(Error::format(KIND, format!("learner {j} indexes past dimension {dim}")));
            }
            let weights = (0..d_sub).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            learners.push(BaseLearner { indices, weights, threshold, lambda });
        }
        r.expect_end()?;
        Ok(Self { dim, d_sub, lambda_scale, learners })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.encode())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&read_file(path.as_ref())?)
    }
}

const MAGIC: &[u8; 4] = b"STGE";
const KIND: &str = "ensemble";
pub const ENSEMBLE_VERSION: u16 = 1;
