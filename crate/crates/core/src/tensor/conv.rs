//! 2-D cross-correlation with zero padding, via im2col + GEMM.

use super::{matmul, Mat, Real, Shape4, Tensor4};
use crate::error::{ensure, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T = f32> {
    /// `(out_c, in_c, kh, kw)`.
    pub kernels: Tensor4<T>,
    /// One entry per output channel; `None` for bias-free layers.
    pub bias: Option<Vec<T>>,
    pub stride: usize,
    /// Zero rows/columns added before the top and left edges.
    pub pad: usize,
    /// Zero rows/columns added after the bottom and right edges. Differs
    /// from `pad` only for even kernels that must keep the input size.
    pub pad_end: usize,
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T = f32> {
    pub input: Option<Tensor4<T>>,
    pub kernels: Tensor4<T>,
    pub bias: Option<Vec<T>>,
}

impl<T: Real> ConvParams<T> {
    pub fn out_channels(&self) -> usize {
        self.kernels.shape().n
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.shape().c
    }

    pub fn kernel_size(&self) -> (usize, usize) {
        let s = self.kernels.shape();
        (s.h, s.w)
    }

    pub fn is_pointwise(&self) -> bool {
        self.kernel_size() == (1, 1) && self.stride == 1 && self.pad == 0 && self.pad_end == 0
    }

    /// Symmetric padding.
    pub fn new(kernels: Tensor4<T>, bias: Option<Vec<T>>, stride: usize, pad: usize) -> Self {
        Self { kernels, bias, stride, pad, pad_end: pad }
    }

    /// Output shape for `input`, or a contract error naming the bad dimension.
    pub fn output_shape(&self, input: Shape4) -> Result<Shape4> {
        let (kh, kw) = self.kernel_size();
        ensure!(self.stride >= 1, "conv2d: stride must be positive");
        ensure!(
            input.c == self.in_channels(),
            "conv2d: input channels {} != kernel in_channels {}",
            input.c,
            self.in_channels()
        );
        ensure!(
            kh <= input.h + self.pad + self.pad_end,
            "conv2d: kernel height {kh} exceeds padded input height {}",
            input.h + self.pad + self.pad_end
        );
        ensure!(
            kw <= input.w + self.pad + self.pad_end,
            "conv2d: kernel width {kw} exceeds padded input width {}",
            input.w + self.pad + self.pad_end
        );
        if let Some(b) = &self.bias {
            ensure!(
                b.len() == self.out_channels(),
                "conv2d: bias length {} != out_channels {}",
                b.len(),
                self.out_channels()
            );
        }
        Ok(Shape4::new(
            input.n,
            self.out_channels(),
            (input.h + self.pad + self.pad_end - kh) / self.stride + 1,
            (input.w + self.pad + self.pad_end - kw) / self.stride + 1,
        ))
    }
}

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn new<T: Real>(p: &ConvParams<T>, input: Shape4, out: Shape4) -> Self {
        let (kh, kw) = p.kernel_size();
        Self { c: input.c, h: input.h, w: input.w, kh, kw, stride: p.stride, pad: p.pad, oh: out.h, ow: out.w }
    }

    fn patch_len(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// Valid output columns `[lo, hi)` for kernel column `kj`.
    #[inline]
    fn col_range(&self, kj: usize) -> (usize, usize) {
        range_for(kj, self.pad, self.stride, self.w, self.ow)
    }

    #[inline]
    fn row_range(&self, ki: usize) -> (usize, usize) {
        range_for(ki, self.pad, self.stride, self.h, self.oh)
    }
}

/// Output indices `o` with `0 <= o*stride + k - pad < extent`.
#[inline]
fn range_for(k: usize, pad: usize, stride: usize, extent: usize, out: usize) -> (usize, usize) {
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    // o*stride + k - pad <= extent - 1
    let limit = extent + pad;
    let hi = if limit > k { ((limit - k - 1) / stride + 1).min(out) } else { 0 };
    (lo.min(hi), hi)
}

fn im2col<T: Real>(g: &Geometry, sample: &[T], cols: &mut [T]) {
    let p = g.positions();
    for c in 0..g.c {
        let plane = &sample[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            let (ylo, yhi) = g.row_range(ki);
            for kj in 0..g.kw {
                let row = &mut cols[((c * g.kh + ki) * g.kw + kj) * p..][..p];
                let (xlo, xhi) = g.col_range(kj);
                for oy in 0..g.oh {
                    let out = &mut row[oy * g.ow..(oy + 1) * g.ow];
                    if oy < ylo || oy >= yhi {
                        out.fill(T::zero());
                        continue;
                    }
                    let iy = oy * g.stride + ki - g.pad;
                    let src = &plane[iy * g.w..(iy + 1) * g.w];
                    out[..xlo].fill(T::zero());
                    out[xhi..].fill(T::zero());
                    if g.stride == 1 {
                        let x0 = xlo + kj - g.pad;
                        out[xlo..xhi].copy_from_slice(&src[x0..x0 + (xhi - xlo)]);
                    } else {
                        for ox in xlo..xhi {
                            out[ox] = src[ox * g.stride + kj - g.pad];
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Real>(g: &Geometry, cols: &[T], sample: &mut [T]) {
    let p = g.positions();
    for c in 0..g.c {
        let plane = &mut sample[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            let (ylo, yhi) = g.row_range(ki);
            for kj in 0..g.kw {
                let row = &cols[((c * g.kh + ki) * g.kw + kj) * p..][..p];
                let (xlo, xhi) = g.col_range(kj);
                for oy in ylo..yhi {
                    let iy = oy * g.stride + ki - g.pad;
                    let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                    let src = &row[oy * g.ow..(oy + 1) * g.ow];
                    for ox in xlo..xhi {
                        dst[ox * g.stride + kj - g.pad] += src[ox];
                    }
                }
            }
        }
    }
}

/// Cross-correlation (no kernel flip) with zero padding.
pub fn conv2d<T: Real>(input: &Tensor4<T>, p: &ConvParams<T>) -> Result<Tensor4<T>> {
    let in_shape = input.shape();
    let out_shape = p.output_shape(in_shape)?;
    let g = Geometry::new(p, in_shape, out_shape);
    let (k, np, oc) = (g.patch_len(), g.positions(), p.out_channels());
    let mut out = Tensor4::zeros(out_shape);
    let mut cols = if p.is_pointwise() { Vec::new() } else { vec![T::zero(); k * np] };
    let weights = Mat::new(p.kernels.data(), oc, k);
    for n in 0..in_shape.n {
        let src: &[T] = if p.is_pointwise() {
            input.sample(n)
        } else {
            im2col(&g, input.sample(n), &mut cols);
            &cols
        };
        let dst = out.sample_mut(n);
        if let Some(bias) = &p.bias {
            for (o, &b) in bias.iter().enumerate() {
                dst[o * np..(o + 1) * np].fill(b);
            }
            matmul(weights, Mat::new(src, k, np), dst, T::one());
        } else {
            matmul(weights, Mat::new(src, k, np), dst, T::zero());
        }
    }
    Ok(out)
}

/// Gradients of a convolution with respect to its input, kernels and bias.
pub fn conv2d_grad<T: Real>(
    input: &Tensor4<T>,
    p: &ConvParams<T>,
    grad_out: &Tensor4<T>,
) -> Result<ConvGrads<T>> {
    conv2d_backward(input, p, grad_out, true, true)
}

/// As [`conv2d_grad`], skipping the input or parameter gradients when not
/// needed. Skipped parameter gradients are returned as zeros.
pub fn conv2d_backward<T: Real>(
    input: &Tensor4<T>,
    p: &ConvParams<T>,
    grad_out: &Tensor4<T>,
    need_input: bool,
    need_params: bool,
) -> Result<ConvGrads<T>> {
    let in_shape = input.shape();
    let out_shape = p.output_shape(in_shape)?;
    ensure!(
        grad_out.shape() == out_shape,
        "conv2d_grad: grad_out shape {} != output shape {out_shape}",
        grad_out.shape()
    );
    let g = Geometry::new(p, in_shape, out_shape);
    let (k, np, oc) = (g.patch_len(), g.positions(), p.out_channels());
    let mut grad_k = Tensor4::zeros(p.kernels.shape());
    let mut grad_b = p.bias.as_ref().map(|b| vec![T::zero(); b.len()]);
    let mut grad_in = need_input.then(|| Tensor4::zeros(in_shape));
    let pointwise = p.is_pointwise();
    let mut cols = if pointwise { Vec::new() } else { vec![T::zero(); k * np] };
    let mut gcols = if pointwise || !need_input { Vec::new() } else { vec![T::zero(); k * np] };
    let weights = Mat::new(p.kernels.data(), oc, k);

    for n in 0..in_shape.n {
        let gout = Mat::new(grad_out.sample(n), oc, np);
        if need_params {
            let src: &[T] = if pointwise {
                input.sample(n)
            } else {
                im2col(&g, input.sample(n), &mut cols);
                &cols
            };
            // dW[oc, k] += dY[oc, P] · X[k, P]^T
            matmul(gout, Mat::new(src, k, np).t(), grad_k.data_mut(), T::one());
            if let Some(gb) = grad_b.as_mut() {
                for (o, b) in gb.iter_mut().enumerate() {
                    let s: f64 = grad_out.sample(n)[o * np..(o + 1) * np].iter().map(|v| v.as_f64()).sum();
                    *b += T::from_f64_lossy(s);
                }
            }
        }
        if let Some(gi) = grad_in.as_mut() {
            if pointwise {
                matmul(weights.t(), gout, gi.sample_mut(n), T::zero());
            } else {
                matmul(weights.t(), gout, &mut gcols, T::zero());
                col2im_add(&g, &gcols, gi.sample_mut(n));
            }
        }
    }
    Ok(ConvGrads { input: grad_in, kernels: grad_k, bias: grad_b })
}
