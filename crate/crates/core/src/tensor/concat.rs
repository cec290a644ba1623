use super::{Real, Shape4, Tensor4};
use crate::error::{ensure, Result};

/// Concatenates along the channel axis, in the order given.
pub fn concat_channels<T: Real>(inputs: &[&Tensor4<T>]) -> Result<Tensor4<T>> {
    ensure!(!inputs.is_empty(), "concat_channels: no inputs");
    let s0 = inputs[0].shape();
    for t in inputs {
        let s = t.shape();
        ensure!(
            s.n == s0.n && s.h == s0.h && s.w == s0.w,
            "concat_channels: input {s} does not share (n, h, w) with {s0}"
        );
    }
    let channels: usize = inputs.iter().map(|t| t.shape().c).sum();
    let out_shape = Shape4::new(s0.n, channels, s0.h, s0.w);
    let mut data = Vec::with_capacity(out_shape.len());
    for n in 0..s0.n {
        for t in inputs {
            data.extend_from_slice(t.sample(n));
        }
    }
    Tensor4::new(out_shape, data)
}

/// Channels `[start, start + len)` of every sample.
pub fn slice_channels<T: Real>(x: &Tensor4<T>, start: usize, len: usize) -> Result<Tensor4<T>> {
    let s = x.shape();
    ensure!(
        len >= 1 && start + len <= s.c,
        "slice_channels: range {start}..{} outside {} channels",
        start + len,
        s.c
    );
    let plane = s.plane();
    let mut data = Vec::with_capacity(s.n * len * plane);
    for n in 0..s.n {
        data.extend_from_slice(&x.sample(n)[start * plane..(start + len) * plane]);
    }
    Tensor4::new(Shape4::new(s.n, len, s.h, s.w), data)
}

/// Adds `update` into the leading `update.c` channels of `state`.
pub fn add_prefix<T: Real>(state: &Tensor4<T>, update: &Tensor4<T>) -> Result<Tensor4<T>> {
    let (s, u) = (state.shape(), update.shape());
    ensure!(
        s.n == u.n && s.h == u.h && s.w == u.w && u.c <= s.c,
        "add_prefix: update {u} does not fit into state {s}"
    );
    let mut out = state.clone();
    let len = u.sample_len();
    for n in 0..s.n {
        for (a, &b) in out.sample_mut(n)[..len].iter_mut().zip(update.sample(n)) {
            *a += b;
        }
    }
    Ok(out)
}
