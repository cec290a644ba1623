use super::{Real, Tensor4};
use crate::error::{ensure, Result};

pub fn relu<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(|v| if v <= T::zero() { T::zero() } else { v })
}

/// Passes gradient where `x > 0`; the subgradient at exactly 0 is 0.
pub fn relu_backward<T: Real>(x: &Tensor4<T>, grad_out: &Tensor4<T>) -> Tensor4<T> {
    zip_map(x, grad_out, |v, g| if v > T::zero() { g } else { T::zero() })
}

/// Truncated linear unit: clamp to `[-t, t]`.
pub fn tlu<T: Real>(x: &Tensor4<T>, t: T) -> Result<Tensor4<T>> {
    ensure!(t > T::zero(), "tlu: threshold must be positive");
    // Comparisons rather than max/min so that NaN propagates.
    Ok(x.map(|v| {
        if v < -t {
            -t
        } else if v > t {
            t
        } else {
            v
        }
    }))
}

/// Gradient 1 on the closed interval `[-t, t]`, 0 outside.
pub fn tlu_backward<T: Real>(x: &Tensor4<T>, grad_out: &Tensor4<T>, t: T) -> Tensor4<T> {
    zip_map(x, grad_out, |v, g| if v.abs() <= t { g } else { T::zero() })
}

pub fn abs<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(|v| v.abs())
}

/// Sign of `x` times the incoming gradient; 0 at `x == 0`.
pub fn abs_backward<T: Real>(x: &Tensor4<T>, grad_out: &Tensor4<T>) -> Tensor4<T> {
    zip_map(x, grad_out, |v, g| {
        if v > T::zero() {
            g
        } else if v < T::zero() {
            -g
        } else {
            T::zero()
        }
    })
}

fn zip_map<T: Real>(x: &Tensor4<T>, g: &Tensor4<T>, f: impl Fn(T, T) -> T) -> Tensor4<T> {
    assert_eq!(x.shape(), g.shape(), "gradient shape");
    let data = x.data().iter().zip(g.data()).map(|(&a, &b)| f(a, b)).collect();
    Tensor4::new(x.shape(), data).expect("same shape")
}
