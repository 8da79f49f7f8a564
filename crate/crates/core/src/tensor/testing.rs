//! Test fixtures and independent oracles.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{init, Real, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<T> {
    init::uniform(rng, shape, -1.0, 1.0)
}

/// Φ(x) from the Maclaurin series of erf, summed until terms vanish.
pub fn normal_cdf_series(x: f64) -> f64 {
    let z = x / std::f64::consts::SQRT_2;
    let mut term = z;
    let mut sum = z;
    let mut n = 0.0;
    while term.abs() > 1e-18 {
        n += 1.0;
        term *= -z * z / n;
        sum += term / (2.0 * n + 1.0);
    }
    0.5 * (1.0 + 2.0 / std::f64::consts::PI.sqrt() * sum)
}
