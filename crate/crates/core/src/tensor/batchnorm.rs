//! Per-channel batch normalization over `(n, h, w)`.

use super::{Real, Tensor4};
use crate::error::{ensure, Result};

pub const BN_EPSILON: f64 = 1e-5;
/// Weight of the previous running statistic in the moving average.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams<T = f32> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub epsilon: f64,
    pub momentum: f64,
}

impl<T: Real> BatchNormParams<T> {
    /// gamma = 1, beta = 0, running mean 0 and variance 1.
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            epsilon: BN_EPSILON,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// What the backward pass needs from a forward call.
#[derive(Debug, Clone)]
pub struct BnCache<T = f32> {
    xhat: Vec<T>,
    inv_std: Vec<f64>,
    training: bool,
}

#[derive(Debug, Clone)]
pub struct BnGrads<T = f32> {
    pub input: Tensor4<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

/// Inference-mode batch norm that leaves `p` untouched.
pub fn batch_norm_inference<T: Real>(x: &Tensor4<T>, p: &BatchNormParams<T>) -> Result<Tensor4<T>> {
    let mut frozen = p.clone();
    Ok(batch_norm_forward(x, &mut frozen, false)?.0)
}

pub fn batch_norm<T: Real>(x: &Tensor4<T>, p: &mut BatchNormParams<T>, training: bool) -> Result<Tensor4<T>> {
    Ok(batch_norm_forward(x, p, training)?.0)
}

/// Training mode normalizes with batch statistics and folds them into the
/// running averages; inference mode uses the running statistics.
pub fn batch_norm_forward<T: Real>(
    x: &Tensor4<T>,
    p: &mut BatchNormParams<T>,
    training: bool,
) -> Result<(Tensor4<T>, BnCache<T>)> {
    let s = x.shape();
    ensure!(
        p.channels() == s.c
            && p.beta.len() == s.c
            && p.running_mean.len() == s.c
            && p.running_var.len() == s.c,
        "batch_norm: parameter length {} != input channels {}",
        p.channels(),
        s.c
    );
    let plane = s.plane();
    let count = (s.n * plane) as f64;
    let mut out = Tensor4::zeros(s);
    let mut xhat = vec![T::zero(); s.len()];
    let mut inv_std = vec![0.0f64; s.c];

    for c in 0..s.c {
        let (mean, var) = if training {
            let mut sum = 0.0;
            for n in 0..s.n {
                sum += x.plane(n, c).iter().map(|v| v.as_f64()).sum::<f64>();
            }
            let mean = sum / count;
            let mut sq = 0.0;
            for n in 0..s.n {
                sq += x.plane(n, c).iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>();
            }
            let var = sq / count;
            let unbiased = if count > 1.0 { sq / (count - 1.0) } else { var };
            let rm = p.running_mean[c].as_f64();
            let rv = p.running_var[c].as_f64();
            p.running_mean[c] = T::from_f64_lossy(p.momentum * rm + (1.0 - p.momentum) * mean);
            p.running_var[c] = T::from_f64_lossy(p.momentum * rv + (1.0 - p.momentum) * unbiased);
            (mean, var)
        } else {
            (p.running_mean[c].as_f64(), p.running_var[c].as_f64().max(0.0))
        };
        let istd = 1.0 / (var + p.epsilon).sqrt();
        inv_std[c] = istd;
        let (g, b) = (p.gamma[c].as_f64(), p.beta[c].as_f64());
        for n in 0..s.n {
            let base = x.index(n, c, 0, 0);
            for i in base..base + plane {
                let xh = (x.data()[i].as_f64() - mean) * istd;
                xhat[i] = T::from_f64_lossy(xh);
                out.data_mut()[i] = T::from_f64_lossy(g * xh + b);
            }
        }
    }
    Ok((out, BnCache { xhat, inv_std, training }))
}

pub fn batch_norm_backward<T: Real>(
    cache: &BnCache<T>,
    p: &BatchNormParams<T>,
    grad_out: &Tensor4<T>,
) -> Result<BnGrads<T>> {
    let s = grad_out.shape();
    ensure!(
        cache.xhat.len() == s.len() && cache.inv_std.len() == s.c,
        "batch_norm backward: grad_out shape {s} does not match the forward pass"
    );
    let plane = s.plane();
    let count = (s.n * plane) as f64;
    let mut gin = Tensor4::zeros(s);
    let mut ggamma = vec![T::zero(); s.c];
    let mut gbeta = vec![T::zero(); s.c];
    for c in 0..s.c {
        let gamma = p.gamma[c].as_f64();
        let istd = cache.inv_std[c];
        let (mut sum_g, mut sum_gx) = (0.0f64, 0.0f64);
        for n in 0..s.n {
            let base = grad_out.index(n, c, 0, 0);
            for i in base..base + plane {
                let g = grad_out.data()[i].as_f64();
                sum_g += g;
                sum_gx += g * cache.xhat[i].as_f64();
            }
        }
        ggamma[c] = T::from_f64_lossy(sum_gx);
        gbeta[c] = T::from_f64_lossy(sum_g);
        for n in 0..s.n {
            let base = grad_out.index(n, c, 0, 0);
            for i in base..base + plane {
                let g = grad_out.data()[i].as_f64();
                let v = if cache.training {
                    let xh = cache.xhat[i].as_f64();
                    gamma * istd / count * (count * g - sum_g - xh * sum_gx)
                } else {
                    gamma * istd * g
                };
                gin.data_mut()[i] = T::from_f64_lossy(v);
            }
        }
    }
    Ok(BnGrads { input: gin, gamma: ggamma, beta: gbeta })
}
