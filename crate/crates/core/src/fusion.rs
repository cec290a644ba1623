//! Fusion of CNN features and classical features.
//!
//! The pooled features of `i` trained networks are concatenated per image.
//! `k` ensemble classifiers with different seeds are trained on the
//! concatenation and one more on the classical features; the image is
//! called stego when the mean of the `k + 1` probabilities exceeds 0.5.

use std::fmt::Write as _;
use std::path::Path;

use crate::binio::{read_file, write_file, Reader, Writer};
use crate::error::{ensure, Error, Result};
use crate::fld::{train_fld, EnsembleConfig, EnsembleModel};
use crate::gfr::FeatureMatrix;
use crate::net::FEATURE_DIM;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    /// Networks whose features are concatenated (`i`).
    pub n_cnn_models: usize,
    /// Classifiers trained on the concatenated CNN features (`k`).
    pub n_cnn_classifiers: usize,
    /// Stego iff the fused probability exceeds this.
    pub threshold: f64,
    /// Settings shared by all classifiers; the seed is replaced per classifier.
    pub ensemble: EnsembleConfig,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { n_cnn_models: 9, n_cnn_classifiers: 6, threshold: 0.5, ensemble: EnsembleConfig::default() }
    }
}

impl FusionConfig {
    pub fn probability_count(&self) -> usize {
        self.n_cnn_classifiers + 1
    }

    pub fn cnn_dim(&self) -> usize {
        self.n_cnn_models * FEATURE_DIM
    }

    fn validate(&self) -> Result<()> {
        ensure!(self.n_cnn_models >= 1, "fusion needs at least one network");
        ensure!(self.n_cnn_classifiers >= 1, "fusion needs at least one CNN-side classifier");
        ensure!((0.0..1.0).contains(&self.threshold), "threshold {} outside [0, 1)", self.threshold);
        Ok(())
    }
}

/// Per-model feature vectors joined in model order; model `j` occupies
/// `[160·j, 160·(j+1))`.
pub fn concat_cnn_features(per_model: &[Vec<f32>], cfg: &FusionConfig) -> Result<Vec<f32>> {
    ensure!(
        per_model.len() == cfg.n_cnn_models,
        "expected features from {} networks, got {}",
        cfg.n_cnn_models,
        per_model.len()
    );
    for (j, f) in per_model.iter().enumerate() {
        ensure!(f.len() == FEATURE_DIM, "network {j} gave {} features, expected {FEATURE_DIM}", f.len());
    }
    Ok(per_model.concat())
}

/// Row-wise [`concat_cnn_features`] over per-model feature tables.
pub fn concat_feature_matrices(per_model: &[FeatureMatrix], cfg: &FusionConfig) -> Result<FeatureMatrix> {
    ensure!(
        per_model.len() == cfg.n_cnn_models,
        "expected feature tables from {} networks, got {}",
        cfg.n_cnn_models,
        per_model.len()
    );
    let rows = per_model[0].rows();
    ensure!(per_model.iter().all(|m| m.rows() == rows), "feature tables have different sample counts");
    let mut data = Vec::with_capacity(rows * cfg.cnn_dim());
    for i in 0..rows {
        let parts: Vec<Vec<f32>> = per_model.iter().map(|m| m.row(i).to_vec()).collect();
        data.extend(concat_cnn_features(&parts, cfg)?);
    }
    FeatureMatrix::new(cfg.cnn_dim(), 0, data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    pub config: FusionConfig,
    pub cnn: Vec<EnsembleModel>,
    pub classical: EnsembleModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionPrediction {
    /// `P0..P{k-1}` from the CNN side, then the classical probability.
    pub probabilities: Vec<f64>,
    pub fused: f64,
    pub stego: bool,
}

/// Seeds of the `k + 1` classifiers, derived from one run seed.
pub fn classifier_seeds(seed: u64, cfg: &FusionConfig) -> Vec<u64> {
    (0..cfg.probability_count() as u64).map(|j| rng::sub_seed(seed, j)).collect()
}

pub fn train_fusion(
    cnn: &FeatureMatrix,
    classical: &FeatureMatrix,
    labels: &[usize],
    cfg: &FusionConfig,
    seed: u64,
) -> Result<FusionModel> {
    train_fusion_seeded(cnn, classical, labels, cfg, &classifier_seeds(seed, cfg))
}

/// [`train_fusion`] with explicit per-classifier seeds, classical last.
pub fn train_fusion_seeded(
    cnn: &FeatureMatrix,
    classical: &FeatureMatrix,
    labels: &[usize],
    cfg: &FusionConfig,
    seeds: &[u64],
) -> Result<FusionModel> {
    cfg.validate()?;
    ensure!(seeds.len() == cfg.probability_count(), "need {} seeds, got {}", cfg.probability_count(), seeds.len());
    ensure!(
        cnn.rows() == labels.len() && classical.rows() == labels.len(),
        "misaligned datasets: {} CNN rows, {} classical rows, {} labels",
        cnn.rows(),
        classical.rows(),
        labels.len()
    );
    ensure!(cnn.dim == cfg.cnn_dim(), "CNN features have dimension {}, expected {}", cnn.dim, cfg.cnn_dim());
    let with_seed = |seed| EnsembleConfig { seed, ..cfg.ensemble };
    let models = seeds[..cfg.n_cnn_classifiers]
        .iter()
        .map(|&s| train_fld(cnn, labels, &with_seed(s)))
        .collect::<Result<Vec<_>>>()?;
    let classical = train_fld(classical, labels, &with_seed(seeds[cfg.n_cnn_classifiers]))?;
    Ok(FusionModel { config: *cfg, cnn: models, classical })
}

/// Mean of the probabilities.
pub fn fuse(probabilities: &[f64]) -> f64 {
    probabilities.iter().sum::<f64>() / probabilities.len() as f64
}

impl FusionModel {
    pub fn probabilities(&self, cnn: &[f32], classical: &[f32]) -> Result<Vec<f64>> {
        let mut out = self.cnn.iter().map(|m| m.predict_proba(cnn)).collect::<Result<Vec<_>>>()?;
        out.push(self.classical.predict_proba(classical)?);
        Ok(out)
    }

    pub fn predict(&self, cnn: &[f32], classical: &[f32]) -> Result<FusionPrediction> {
        let probabilities = self.probabilities(cnn, classical)?;
        let fused = fuse(&probabilities);
        Ok(FusionPrediction { probabilities, fused, stego: fused > self.config.threshold })
    }

    pub fn predict_all(&self, cnn: &FeatureMatrix, classical: &FeatureMatrix) -> Result<Vec<FusionPrediction>> {
        ensure!(cnn.rows() == classical.rows(), "misaligned datasets: {} vs {} rows", cnn.rows(), classical.rows());
        (0..cnn.rows()).map(|i| self.predict(cnn.row(i), classical.row(i))).collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(MAGIC)
            .u16(FUSION_VERSION)
            .u32(self.config.n_cnn_models as u32)
            .u32(self.config.n_cnn_classifiers as u32)
            .f64(self.config.threshold);
        let e = &self.config.ensemble;
        w.u32(e.learners as u32).u32(e.d_sub.unwrap_or(0) as u32).f64(e.lambda_scale).u64(e.seed);
        for m in self.cnn.iter().chain(std::iter::once(&self.classical)) {
            let blob = m.encode();
            w.u32(blob.len() as u32).bytes(&blob);
        }
        w.finish_with_crc()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut header = Reader::new(bytes, KIND);
        header.magic(MAGIC)?;
        header.version(FUSION_VERSION)?;
        let mut r = Reader::with_crc(bytes, KIND)?;
        r.magic(MAGIC)?;
        r.version(FUSION_VERSION)?;
        let n_cnn_models = r.u32()? as usize;
        let n_cnn_classifiers = r.u32()? as usize;
        let threshold = r.f64()?;
        let learners = r.u32()? as usize;
        let d_sub = match r.u32()? {
            0 => None,
            d => Some(d as usize),
        };
        let lambda_scale = r.f64()?;
        let seed = r.u64()?;
        if n_cnn_classifiers == 0 || n_cnn_classifiers > 1024 {
            return Err(Error::format(KIND, format!("implausible classifier count {n_cnn_classifiers}")));
        }
        let mut models = Vec::with_capacity(n_cnn_classifiers + 1);
        for _ in 0..=n_cnn_classifiers {
            let len = r.u32()? as usize;
            models.push(EnsembleModel::decode(r.take(len)?)?);
        }
        r.expect_end()?;
        let classical = models.pop().expect("at least one model");
        let config = FusionConfig {
            n_cnn_models,
            n_cnn_classifiers,
            threshold,
            ensemble: EnsembleConfig { learners, d_sub, lambda_scale, seed },
        };
        Ok(Self { config, cnn: models, classical })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.encode())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&read_file(path.as_ref())?)
    }
}

/// `sample,P0..P{k},fused,label` with `label` the predicted class.
pub fn predictions_csv(predictions: &[FusionPrediction]) -> String {
    let count = predictions.first().map_or(0, |p| p.probabilities.len());
    let mut out = String::from("sample");
    for j in 0..count {
        write!(out, ",P{j}").unwrap();
    }
    out.push_str(",fused,label\n");
    for (i, p) in predictions.iter().enumerate() {
        write!(out, "{i}").unwrap();
        for v in &p.probabilities {
            write!(out, ",{v}").unwrap();
        }
        writeln!(out, ",{},{}", p.fused, p.stego as u8).unwrap();
    }
    out
}

const MAGIC: &[u8; 4] = b"STGU";
const KIND: &str = "fusion";
pub const FUSION_VERSION: u16 = 1;

#[cfg(test)]
mod tests;
