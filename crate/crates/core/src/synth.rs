//! Synthetic cover images: smoothed random textures for desk-scale runs.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::jpeg::{compress, quality_to_qtable, CoefficientImage, GrayImage};
use crate::rng;
use crate::stego::{embed, EmbedConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TextureParams {
    /// Gaussian blur of the coarse noise layer, in pixels.
    pub coarse_sigma: f64,
    /// Standard deviation of the coarse layer, in grey levels.
    pub coarse_amplitude: f64,
    pub fine_sigma: f64,
    pub fine_amplitude: f64,
    /// Peak-to-peak of a random linear ramp.
    pub ramp: f64,
}

impl Default for TextureParams {
    fn default() -> Self {
        Self { coarse_sigma: 3.0, coarse_amplitude: 28.0, fine_sigma: 0.8, fine_amplitude: 7.0, ramp: 30.0 }
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let k: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable blur with reflected borders.
fn blur(field: &[f64], size: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let reflect = |i: isize| -> usize {
        let n = size as isize;
        let mut i = i;
        if i < 0 {
            i = -i - 1;
        }
        if i >= n {
            i = 2 * n - i - 1;
        }
        i.clamp(0, n - 1) as usize
    };
    let mut tmp = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            tmp[y * size + x] =
                k.iter().enumerate().map(|(j, w)| w * field[y * size + reflect(x as isize + j as isize - r)]).sum();
        }
    }
    let mut out = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            out[y * size + x] =
                k.iter().enumerate().map(|(j, w)| w * tmp[reflect(y as isize + j as isize - r) * size + x]).sum();
        }
    }
    out
}

fn normalized_layer(rng: &mut impl Rng, size: usize, sigma: f64) -> Vec<f64> {
    let noise: Vec<f64> = (0..size * size).map(|_| rng.sample(StandardNormal)).collect();
    let b = blur(&noise, size, sigma);
    let mean = b.iter().sum::<f64>() / b.len() as f64;
    let sd = (b.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / b.len() as f64).sqrt().max(1e-12);
    b.into_iter().map(|v| (v - mean) / sd).collect()
}

/// A `size × size` texture, deterministic in `seed`.
pub fn texture(params: &TextureParams, size: usize, seed: u64) -> GrayImage {
    let mut rng = rng::stream(seed, 0x7E87);
    let coarse = normalized_layer(&mut rng, size, params.coarse_sigma);
    let fine = normalized_layer(&mut rng, size, params.fine_sigma);
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let base: f64 = rng.random_range(100.0..156.0);
    let contrast: f64 = rng.random_range(0.6..1.4);
    let (dx, dy) = (angle.cos(), angle.sin());
    let mut px = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let t = ((x as f64 * dx + y as f64 * dy) / size as f64).clamp(-1.0, 1.0);
            let v = base
                + contrast * (params.coarse_amplitude * coarse[y * size + x] + params.fine_amplitude * fine[y * size + x])
                + params.ramp * 0.5 * t;
            px.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    GrayImage::new(size, size, px).expect("square buffer")
}

/// A cover/stego benchmark of JPEG-compressed textures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Benchmark {
    pub covers: usize,
    pub size: usize,
    /// Payload in bits per nonzero AC coefficient.
    pub alpha: f64,
    pub quality: u32,
    pub seed: u64,
    pub texture: TextureParams,
}

impl Default for Benchmark {
    fn default() -> Self {
        Self { covers: 400, size: 64, alpha: 0.8, quality: 75, seed: 0, texture: TextureParams::default() }
    }
}

impl Benchmark {
    /// Cover and stego coefficients for image `index`.
    pub fn pair(&self, index: usize) -> Result<(CoefficientImage, CoefficientImage)> {
        let qt = quality_to_qtable(self.quality)?;
        let i = index as u64;
        let cover = compress(&texture(&self.texture, self.size, rng::sub_seed(self.seed, 2 * i)), &qt)?;
        let stego = embed(&cover, &EmbedConfig { alpha: self.alpha, seed: rng::sub_seed(self.seed, 2 * i + 1) })?;
        Ok((cover, stego))
    }

    pub fn pairs(&self) -> Result<Vec<(CoefficientImage, CoefficientImage)>> {
        (0..self.covers).map(|i| self.pair(i)).collect()
    }
}
