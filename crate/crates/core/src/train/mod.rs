//! SGD with momentum, paired batches with shared augmentation, snapshot
//! series and probability-averaging evaluation.

mod data;

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;

pub use data::{augment, Dihedral, ImagePair, PairEntry, PairedDataset, Split};

use crate::error::{ensure, Error, Result};
use crate::jpeg::RealImage;
use crate::net::{CheckpointMeta, NetGraph, DCT_NODE};
use crate::rng;
use crate::tensor::{Shape4, Tensor4};

/// Iteration count the reference schedule is written for.
pub const REFERENCE_ITERS: u64 = 120_000;
const INFERENCE_CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub lr_divisor: f64,
    pub lr_step: u64,
    pub momentum: f64,
    /// Multiplies the learning rate of the DCT kernels.
    pub dct_lr_scale: f64,
    /// Recompute batch-norm statistics from the training pairs before each
    /// snapshot instead of keeping the running averages.
    pub recalibrate_bn: bool,
    pub batch_pairs: usize,
    pub max_iters: u64,
    pub checkpoint_every: u64,
    pub seed: u64,
    /// `lr_step` and `checkpoint_every` relative to the reference schedule.
    pub scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 0.001,
            lr_divisor: 5.0,
            lr_step: 30_000,
            momentum: 0.9,
            dct_lr_scale: 0.01,
            recalibrate_bn: true,
            batch_pairs: 16,
            max_iters: REFERENCE_ITERS,
            checkpoint_every: 5_000,
            seed: 0,
            scale: 1.0,
        }
    }
}

impl TrainConfig {
    /// Shrinks the step schedule and checkpoint interval in proportion to
    /// `max_iters`.
    pub fn scaled(max_iters: u64) -> Self {
        let scale = max_iters as f64 / REFERENCE_ITERS as f64;
        let d = Self::default();
        Self {
            lr_step: ((d.lr_step as f64 * scale).round() as u64).max(1),
            checkpoint_every: ((d.checkpoint_every as f64 * scale).round() as u64).max(1),
            max_iters,
            scale,
            ..d
        }
    }

    /// `lr0 / lr_divisor^floor(iter / lr_step)`.
    pub fn lr_at(&self, iter: u64) -> f64 {
        self.lr0 / self.lr_divisor.powi((iter / self.lr_step.max(1)) as i32)
    }

    fn validate(&self) -> Result<()> {
        ensure!(self.batch_pairs >= 1, "batch_pairs must be at least 1");
        ensure!(self.lr0 > 0.0 && self.lr0.is_finite(), "lr0 must be positive");
        ensure!(self.lr_divisor > 0.0, "lr_divisor must be positive");
        ensure!((0.0..1.0).contains(&self.momentum), "momentum must be in [0, 1)");
        ensure!(self.dct_lr_scale >= 0.0 && self.dct_lr_scale.is_finite(), "dct_lr_scale must be non-negative");
        ensure!(self.lr_step >= 1 && self.checkpoint_every >= 1, "lr_step and checkpoint_every must be positive");
        Ok(())
    }
}

/// Momentum buffers, one per learnable array.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    pub velocity: Vec<Vec<f32>>,
}

impl SgdState {
    pub fn new(g: &NetGraph) -> Self {
        Self { velocity: g.param_info().iter().map(|p| vec![0.0; p.len]).collect() }
    }
}

/// `v ← momentum·v − rate·grad; p ← p + v` for every array with a
/// positive `rate`; arrays with rate 0 are frozen.
pub fn sgd_update(
    params: Vec<&mut [f32]>,
    rates: &[f64],
    grads: &[Vec<f32>],
    state: &mut SgdState,
    momentum: f64,
) -> Result<()> {
    ensure!(
        params.len() == grads.len() && params.len() == state.velocity.len() && params.len() == rates.len(),
        "sgd: {} parameter arrays, {} rates, {} gradients, {} velocities",
        params.len(),
        rates.len(),
        grads.len(),
        state.velocity.len()
    );
    let mu = momentum as f32;
    for (((p, g), v), &rate) in params.into_iter().zip(grads).zip(&mut state.velocity).zip(rates) {
        if rate <= 0.0 {
            continue;
        }
        ensure!(p.len() == g.len() && p.len() == v.len(), "sgd: array length mismatch");
        let lr = rate as f32;
        for ((p, &g), v) in p.iter_mut().zip(g).zip(v.iter_mut()) {
            *v = mu * *v - lr * g;
            *p += *v;
        }
    }
    Ok(())
}

/// One forward/backward pass on `batch` and a momentum update at the
/// learning rate for `iter`. Returns the batch loss.
pub fn sgd_step(
    g: &mut NetGraph,
    batch: &Tensor4,
    labels: &[usize],
    state: &mut SgdState,
    cfg: &TrainConfig,
    iter: u64,
) -> Result<f64> {
    let step = g.train_step(batch, labels)?;
    if !step.loss.is_finite() {
        return Err(Error::Diverged { iteration: iter, loss: step.loss });
    }
    let lr = cfg.lr_at(iter);
    let rates: Vec<f64> = g
        .param_info()
        .iter()
        .map(|p| match (p.trainable, p.name.starts_with(DCT_NODE)) {
            (false, _) => 0.0,
            (true, true) => lr * cfg.dct_lr_scale,
            (true, false) => lr,
        })
        .collect();
    sgd_update(g.params_mut(), &rates, &step.grads, state, cfg.momentum)?;
    Ok(step.loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub iter: u64,
    pub lr: f64,
    /// Mean training loss since the previous row.
    pub loss: f64,
    pub val_error: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub meta: CheckpointMeta,
    pub graph: NetGraph,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<LogRow>,
    /// One per `checkpoint_every` iterations, plus the final state.
    pub snapshots: Vec<Snapshot>,
    pub scale: f64,
}

impl TrainOutcome {
    /// `# scale=…` comment, then `iter,lr,loss,val_error` rows.
    pub fn log_csv(&self) -> String {
        let mut out = format!("# scale={} (lr_step and checkpoint_every relative to {REFERENCE_ITERS} iterations)\n", self.scale);
        out.push_str("iter,lr,loss,val_error\n");
        for r in &self.log {
            let val = r.val_error.map(|e| e.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{}", r.iter, r.lr, r.loss, val);
        }
        out
    }

    pub fn write_log(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.log_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Deterministic pair order: each epoch is a fresh permutation.
struct BatchOrder {
    seed: u64,
    n: usize,
    epoch: Option<u64>,
    perm: Vec<usize>,
}

impl BatchOrder {
    fn new(seed: u64, n: usize) -> Self {
        Self { seed: rng::sub_seed(seed, 1), n, epoch: None, perm: Vec::new() }
    }

    fn at(&mut self, position: u64) -> usize {
        let epoch = position / self.n as u64;
        if self.epoch != Some(epoch) {
            self.perm = (0..self.n).collect();
            self.perm.shuffle(&mut rng::stream(self.seed, epoch));
            self.epoch = Some(epoch);
        }
        self.perm[(position % self.n as u64) as usize]
    }
}

/// Batch for iteration `iter`: `batch_pairs` pairs laid out cover, stego,
/// cover, stego… with one shared random transform per pair.
pub fn make_batch(pairs: &[ImagePair], indices: &[usize], seed: u64, iter: u64) -> Result<(Tensor4, Vec<usize>)> {
    ensure!(!indices.is_empty(), "empty batch");
    let mut draw = rng::stream(rng::sub_seed(seed, 2), iter);
    let first = &pairs[indices[0]].cover;
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(indices.len() * 2 * h * w);
    let mut labels = Vec::with_capacity(indices.len() * 2);
    for &i in indices {
        let t = Dihedral::random(&mut draw);
        for (img, label) in [(&pairs[i].cover, 0), (&pairs[i].stego, 1)] {
            ensure!((img.height(), img.width()) == (h, w), "images in a batch must share one size");
            data.extend_from_slice(augment(img, t)?.values());
            labels.push(label);
        }
    }
    Ok((Tensor4::new(Shape4::new(labels.len(), 1, h, w), data)?, labels))
}

/// Unaugmented paired batches over all of `pairs`, in order.
fn plain_batches(pairs: &[ImagePair], batch_pairs: usize) -> impl Iterator<Item = Result<Tensor4>> + '_ {
    pairs.chunks(batch_pairs).map(|chunk| {
        let (h, w) = (chunk[0].cover.height(), chunk[0].cover.width());
        let mut data = Vec::with_capacity(2 * chunk.len() * h * w);
        for p in chunk {
            data.extend_from_slice(p.cover.values());
            data.extend_from_slice(p.stego.values());
        }
        Tensor4::new(Shape4::new(2 * chunk.len(), 1, h, w), data)
    })
}

/// Trains `g` in place; it ends equal to the last snapshot. Validation (if
/// `val` is non-empty) runs in inference mode at every checkpoint.
pub fn train(g: &mut NetGraph, pairs: &[ImagePair], val: &[ImagePair], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    ensure!(!pairs.is_empty(), "training set is empty");
    let mut state = SgdState::new(g);
    let mut order = BatchOrder::new(cfg.seed, pairs.len());
    let mut log = Vec::new();
    let mut snapshots = Vec::new();
    let (mut loss_sum, mut loss_count) = (0.0, 0u64);
    let bp = cfg.batch_pairs as u64;
    let variant = g.variant();
    let meta = |iteration| CheckpointMeta { iteration, seed: cfg.seed, variant };

    for iter in 0..cfg.max_iters {
        let indices: Vec<usize> = (0..bp).map(|k| order.at(iter * bp + k)).collect();
        let (batch, labels) = make_batch(pairs, &indices, cfg.seed, iter)?;
        loss_sum += sgd_step(g, &batch, &labels, &mut state, cfg, iter)?;
        loss_count += 1;

        let done = iter + 1;
        if done % cfg.checkpoint_every == 0 || done == cfg.max_iters {
            let mut snapshot = g.clone();
            if cfg.recalibrate_bn {
                snapshot.recalibrate_batch_norm(plain_batches(pairs, cfg.batch_pairs))?;
            }
            let val_error =
                if val.is_empty() { None } else { Some(evaluate(std::slice::from_ref(&snapshot), val)?.error) };
            log.push(LogRow { iter: done, lr: cfg.lr_at(iter), loss: loss_sum / loss_count as f64, val_error });
            (loss_sum, loss_count) = (0.0, 0);
            snapshots.push(Snapshot { meta: meta(done), graph: snapshot });
        }
    }
    if let Some(last) = snapshots.last() {
        *g = last.graph.clone();
    }
    Ok(TrainOutcome { log, snapshots, scale: cfg.scale })
}

fn batches<'a>(images: &'a [&RealImage]) -> impl Iterator<Item = Result<Tensor4>> + 'a {
    images.chunks(INFERENCE_CHUNK).map(|chunk| {
        let (h, w) = (chunk[0].height(), chunk[0].width());
        let mut data = Vec::with_capacity(chunk.len() * h * w);
        for img in chunk {
            ensure!((img.height(), img.width()) == (h, w), "images must share one size");
            data.extend_from_slice(img.values());
        }
        Tensor4::new(Shape4::new(chunk.len(), 1, h, w), data)
    })
}

/// Stego probability of each image under one model, in inference mode.
pub fn stego_probabilities(model: &NetGraph, images: &[&RealImage]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(images.len());
    for batch in batches(images) {
        out.extend(model.predict(&batch?)?.chunks(2).map(|p| p[1]));
    }
    Ok(out)
}

/// Pooled features of each image under one model, in inference mode.
pub fn pooled_features(model: &NetGraph, images: &[&RealImage]) -> Result<Vec<Vec<f32>>> {
    let mut out = Vec::with_capacity(images.len());
    for batch in batches(images) {
        let f = model.features(&batch?)?;
        out.extend(f.data().chunks(model.feature_dim()).map(<[f32]>::to_vec));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// `(false alarms + misses) / images`.
    pub error: f64,
    /// Mean stego probability per image: cover then stego for each pair.
    pub probabilities: Vec<f64>,
    pub labels: Vec<usize>,
}

/// Mean of the models' stego probabilities per image; stego iff > 0.5.
pub fn evaluate(models: &[NetGraph], pairs: &[ImagePair]) -> Result<Evaluation> {
    ensure!(!models.is_empty(), "evaluate needs at least one model");
    ensure!(!pairs.is_empty(), "evaluate needs at least one pair");
    let mut images = Vec::with_capacity(2 * pairs.len());
    let mut labels = Vec::with_capacity(2 * pairs.len());
    for p in pairs {
        images.extend([&p.cover, &p.stego]);
        labels.extend([0, 1]);
    }
    let per_model = models.iter().map(|m| stego_probabilities(m, &images)).collect::<Result<Vec<_>>>()?;
    let probabilities = mean_probabilities(&per_model)?;
    Ok(Evaluation { error: error_rate(&probabilities, &labels), probabilities, labels })
}

/// Element-wise mean over models.
pub fn mean_probabilities(per_model: &[Vec<f64>]) -> Result<Vec<f64>> {
    ensure!(!per_model.is_empty(), "no model probabilities to average");
    let n = per_model[0].len();
    ensure!(per_model.iter().all(|p| p.len() == n), "models scored different numbers of images");
    let mut sum = vec![0.0; n];
    for probs in per_model {
        for (s, p) in sum.iter_mut().zip(probs) {
            *s += p;
        }
    }
    Ok(sum.into_iter().map(|s| s / per_model.len() as f64).collect())
}

/// Fraction misclassified with the rule stego iff p > 0.5.
pub fn error_rate(probabilities: &[f64], labels: &[usize]) -> f64 {
    let wrong = probabilities.iter().zip(labels).filter(|(&p, &l)| (p > 0.5) != (l == 1)).count();
    wrong as f64 / labels.len().max(1) as f64
}
