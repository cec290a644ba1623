//! 4×4 DCT-II basis kernels for the first layer.

use std::f64::consts::PI;

use crate::tensor::{ConvParams, Shape4, Tensor4};

/// Index convention for the basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DctIndexing {
    /// `k, l, m, n ∈ {0..3}`: sixteen distinct orthonormal kernels.
    #[default]
    ZeroBased,
    /// `k, l, m, n ∈ {1..4}` taken literally. Every kernel with `k = 4` or
    /// `l = 4` is identically zero.
    OneBased,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DctKernelBank {
    /// Row-major `[k*4 + l][m*4 + n]`.
    kernels: [[f64; 16]; 16],
    pub trainable: bool,
}

fn weight(x: usize) -> f64 {
    if x == 0 {
        1.0
    } else {
        std::f64::consts::FRAC_1_SQRT_2
    }
}

/// `B[m][n] = w_k w_l / 4 · cos(kπ(2m+1)/8) · cos(lπ(2n+1)/8)`.
pub fn basis_value(k: usize, l: usize, m: usize, n: usize) -> f64 {
    weight(k) * weight(l) / 4.0
        * (k as f64 * PI * (2 * m + 1) as f64 / 8.0).cos()
        * (l as f64 * PI * (2 * n + 1) as f64 / 8.0).cos()
}

pub fn init_dct_kernels() -> DctKernelBank {
    DctKernelBank::new(DctIndexing::ZeroBased)
}

impl DctKernelBank {
    pub fn new(indexing: DctIndexing) -> Self {
        let offset = match indexing {
            DctIndexing::ZeroBased => 0,
            DctIndexing::OneBased => 1,
        };
        let mut kernels = [[0.0; 16]; 16];
        for k in 0..4 {
            for l in 0..4 {
                for m in 0..4 {
                    for n in 0..4 {
                        kernels[k * 4 + l][m * 4 + n] = basis_value(k + offset, l + offset, m + offset, n + offset);
                    }
                }
            }
        }
        Self { kernels, trainable: true }
    }

    /// Kernel `(k, l)` as 16 row-major values.
    pub fn kernel(&self, k: usize, l: usize) -> &[f64; 16] {
        &self.kernels[k * 4 + l]
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// One input channel, sixteen 4×4 outputs, no bias. Padding 1 before and
    /// 2 after keeps the spatial size.
    pub fn to_conv(&self) -> ConvParams<f32> {
        let data = self.kernels.iter().flatten().map(|&v| v as f32).collect();
        let kernels = Tensor4::new(Shape4::new(16, 1, 4, 4), data).expect("16x1x4x4 shape");
        ConvParams { kernels, bias: None, stride: 1, pad: 1, pad_end: 2 }
    }
}
