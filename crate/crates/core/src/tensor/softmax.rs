//! Fully-connected layer fused with softmax cross-entropy.

use super::{Real, Tensor4};
use crate::error::{ensure, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams<T = f32> {
    /// `inputs × classes`, row-major.
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    pub inputs: usize,
    pub classes: usize,
}

impl<T: Real> DenseParams<T> {
    pub fn zeros(inputs: usize, classes: usize) -> Self {
        Self { weights: vec![T::zero(); inputs * classes], bias: vec![T::zero(); classes], inputs, classes }
    }
}

#[derive(Debug, Clone)]
pub struct SoftmaxXent<T = f32> {
    /// `n × classes`, rows sum to one.
    pub probs: Vec<f64>,
    /// Mean negative log-likelihood.
    pub loss: f64,
    pub grad_input: Tensor4<T>,
    pub grad_weights: Vec<T>,
    pub grad_bias: Vec<T>,
}

/// Logits `n × classes` for the flattened per-sample input.
pub fn dense_logits<T: Real>(input: &Tensor4<T>, p: &DenseParams<T>) -> Result<Vec<f64>> {
    let s = input.shape();
    ensure!(
        s.sample_len() == p.inputs,
        "dense: flattened input length {} != weight rows {}",
        s.sample_len(),
        p.inputs
    );
    ensure!(
        p.weights.len() == p.inputs * p.classes && p.bias.len() == p.classes,
        "dense: parameter arrays do not match {}×{}",
        p.inputs,
        p.classes
    );
    let mut logits = vec![0.0f64; s.n * p.classes];
    for n in 0..s.n {
        let x = input.sample(n);
        let row = &mut logits[n * p.classes..(n + 1) * p.classes];
        for (j, z) in row.iter_mut().enumerate() {
            *z = p.bias[j].as_f64();
        }
        for (i, &xi) in x.iter().enumerate() {
            let xi = xi.as_f64();
            let w = &p.weights[i * p.classes..(i + 1) * p.classes];
            for (z, &wj) in row.iter_mut().zip(w) {
                *z += xi * wj.as_f64();
            }
        }
    }
    Ok(logits)
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(classes) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|z| (z - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| e / sum));
    }
    out
}

pub fn dense_softmax_xent<T: Real>(
    input: &Tensor4<T>,
    p: &DenseParams<T>,
    labels: &[usize],
) -> Result<SoftmaxXent<T>> {
    let s = input.shape();
    ensure!(labels.len() == s.n, "softmax_xent: {} labels for batch of {}", labels.len(), s.n);
    if let Some(&bad) = labels.iter().find(|&&l| l >= p.classes) {
        crate::error::contract!("softmax_xent: label {bad} out of range 0..{}", p.classes);
    }
    let k = p.classes;
    let logits = dense_logits(input, p)?;
    let probs = softmax(&logits, k);
    let batch = s.n as f64;

    let mut loss = 0.0;
    let mut gz = vec![0.0f64; logits.len()];
    for (n, &label) in labels.iter().enumerate() {
        let row = &logits[n * k..(n + 1) * k];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        loss += lse - row[label];
        for j in 0..k {
            let target = if j == label { 1.0 } else { 0.0 };
            gz[n * k + j] = (probs[n * k + j] - target) / batch;
        }
    }
    loss /= batch;

    let mut gw = vec![0.0f64; p.inputs * k];
    let mut gb = vec![0.0f64; k];
    let mut gx = Vec::with_capacity(s.len());
    for n in 0..s.n {
        let x = input.sample(n);
        let g = &gz[n * k..(n + 1) * k];
        for (j, &gj) in g.iter().enumerate() {
            gb[j] += gj;
        }
        for (i, &xi) in x.iter().enumerate() {
            let xi = xi.as_f64();
            let w = &p.weights[i * k..(i + 1) * k];
            let mut acc = 0.0;
            for j in 0..k {
                gw[i * k + j] += xi * g[j];
                acc += w[j].as_f64() * g[j];
            }
            gx.push(T::from_f64_lossy(acc));
        }
    }
    Ok(SoftmaxXent {
        probs,
        loss,
        grad_input: Tensor4::new(s, gx)?,
        grad_weights: gw.into_iter().map(T::from_f64_lossy).collect(),
        grad_bias: gb.into_iter().map(T::from_f64_lossy).collect(),
    })
}
