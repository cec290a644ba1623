use super::{Real, Shape4, Tensor4};

/// Mean over each `(h, w)` plane; output `(n, c, 1, 1)`.
pub fn global_avg_pool<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    let s = x.shape();
    let area = s.plane() as f64;
    let mut data = Vec::with_capacity(s.n * s.c);
    for n in 0..s.n {
        for c in 0..s.c {
            let sum: f64 = x.plane(n, c).iter().map(|v| v.as_f64()).sum();
            data.push(T::from_f64_lossy(sum / area));
        }
    }
    Tensor4::new(Shape4::new(s.n, s.c, 1, 1), data).expect("pool shape")
}

pub fn global_avg_pool_backward<T: Real>(grad_out: &Tensor4<T>, input_shape: Shape4) -> Tensor4<T> {
    let inv = 1.0 / input_shape.plane() as f64;
    Tensor4::from_fn(input_shape, |n, c, _, _| T::from_f64_lossy(grad_out.at(n, c, 0, 0).as_f64() * inv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{check_gradient, random_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_map() {
        let y = global_avg_pool(&Tensor4::<f32>::filled(Shape4::new(1, 1, 8, 8), 5.0));
        assert_eq!(y.data(), &[5.0]);
    }

    #[test]
    fn ramp_mean() {
        let x = Tensor4::<f64>::from_fn(Shape4::new(1, 1, 8, 8), |_, _, h, w| (h * 8 + w) as f64);
        assert_eq!(global_avg_pool(&x).data(), &[31.5]);
    }

    #[test]
    fn pooled_feature_shape() {
        let y = global_avg_pool(&Tensor4::<f32>::zeros(Shape4::new(1, 160, 8, 8)));
        assert_eq!(y.shape(), Shape4::new(1, 160, 1, 1));
    }

    #[test]
    fn finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let x = random_tensor(&mut rng, Shape4::new(2, 3, 4, 5));
            let w = random_tensor(&mut rng, Shape4::new(2, 3, 1, 1));
            let g = global_avg_pool_backward(&w, x.shape());
            let err = check_gradient(x.data(), g.data(), |i, v| {
                let mut xx = x.clone();
                xx.data_mut()[i] = v;
                global_avg_pool(&xx).data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
            });
            assert!(err < 1e-4);
        }
    }
}
