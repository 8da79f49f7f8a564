use rand::Rng;

use super::{ConvSpec, Real, Tensor};

/// i.i.d. uniform samples on `[lo, hi)`.
pub fn uniform<T: Real>(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::c(rng.random_range(lo..hi)))
}

/// Kaiming-uniform conv weight with `a = √5`: bound `1 / sqrt(fan_in)`.
pub fn kaiming_conv<T: Real>(rng: &mut impl Rng, spec: &ConvSpec) -> Tensor<T> {
    let fan_in = (spec.in_channels / spec.groups) * spec.kernel_h * spec.kernel_w;
    let bound = 1.0 / (fan_in as f64).sqrt();
    uniform(rng, &spec.weight_shape(), -bound, bound)
}

/// Same scheme for an `out×in` dense matrix.
pub fn kaiming_linear<T: Real>(rng: &mut impl Rng, out: usize, fan_in: usize) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    uniform(rng, &[out, fan_in], -bound, bound)
}
