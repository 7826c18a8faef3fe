//! Seeded random number generation. All randomness flows through ChaCha8 so
//! identical seeds reproduce bit-identical runs regardless of platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Elem, Tensor};

pub type Prng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Prng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform sample in [lo, hi). Sampled in f64 and converted, so f32 and f64
/// runs draw the same underlying stream.
pub fn uniform<E: Elem>(rng: &mut Prng, lo: f64, hi: f64) -> E {
    E::of(rng.gen_range(lo..hi))
}

pub fn uniform_tensor<E: Elem>(rng: &mut Prng, shape: &[usize], lo: f64, hi: f64) -> Tensor<E> {
    let n: usize = shape.iter().product();
    let data: Vec<E> = (0..n).map(|_| uniform(rng, lo, hi)).collect();
    Tensor::from_vec(shape, data)
}

/// Centered uniform with fan-in scaling: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
pub fn fan_in_uniform<E: Elem>(rng: &mut Prng, shape: &[usize], fan_in: usize) -> Tensor<E> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    uniform_tensor(rng, shape, -bound, bound)
}
