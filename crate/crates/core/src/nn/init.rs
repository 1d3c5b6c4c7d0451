//! Parameter initialization and Gaussian sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::nn::Tensor4;
use crate::scalar::Scalar;

/// Xavier-uniform bound `sqrt(6 / (fan_in + fan_out))`.
///
/// Fans are derived from tensor shape positions the way common frameworks do
/// for 4-D kernels: receptive field = `shape[0] * shape[1]`,
/// `fan_in = rf * shape[2]`, `fan_out = rf * shape[3]`. For a 4×4 kernel
/// mapping 32→64 channels this gives `sqrt(6/(512+1024)) ≈ 0.0625`.
pub fn xavier_bound(shape: [usize; 4]) -> f64 {
    let rf = (shape[0] * shape[1]) as f64;
    let fan_in = rf * shape[2] as f64;
    let fan_out = rf * shape[3] as f64;
    (6.0 / (fan_in + fan_out)).sqrt()
}

/// Xavier-uniform initialization driven by a caller-supplied RNG.
pub fn xavier_uniform<S: Scalar>(shape: [usize; 4], rng: &mut impl Rng) -> Tensor4<S> {
    let bound = xavier_bound(shape);
    let numel: usize = shape.iter().product();
    let data: Vec<S> = (0..numel)
        .map(|_| S::from_f64_c(rng.gen_range(-bound..bound)))
        .collect();
    Tensor4::new(shape, data).expect("length matches shape by construction")
}

/// Seeded convenience wrapper: same seed ⇒ bit-identical tensor.
pub fn xavier_init<S: Scalar>(shape: [usize; 4], seed: u64) -> Tensor4<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    xavier_uniform(shape, &mut rng)
}

/// Standard-normal tensor, used for reparameterized posterior sampling.
pub fn randn<S: Scalar>(shape: [usize; 4], rng: &mut impl Rng) -> Tensor4<S> {
    let numel: usize = shape.iter().product();
    let data: Vec<S> = (0..numel)
        .map(|_| S::from_f64_c(rng.sample(StandardNormal)))
        .collect();
    Tensor4::new(shape, data).expect("length matches shape by construction")
}
