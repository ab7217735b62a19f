//! Seeded randomness helpers. Every stochastic operation in the crate draws
//! from a ChaCha stream constructed here, so identical seeds reproduce
//! identical results bit for bit.

use alloc::vec::Vec;
#[allow(unused_imports)] // required by the no_std build; std test builds shadow it
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Draw a fresh sub-seed; used to give each pair/frame its own stream.
pub fn derive_seed(rng: &mut ChaCha8Rng) -> u64 {
    rng.gen()
}

/// One standard-normal draw via Box-Muller (cosine branch).
pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>(); // (0, 1], keeps ln finite
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (core::f64::consts::TAU * u2).cos()
}

pub fn fill_standard_normal(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = standard_normal(rng);
    }
}

/// `k` distinct indices drawn uniformly from `0..n`, returned sorted.
pub fn sample_indices(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    debug_assert!(k <= n);
    let mut idx: Vec<usize> = (0..n).collect();
    let (picked, _) = idx.partial_shuffle(rng, k);
    let mut picked: Vec<usize> = picked.to_vec();
    picked.sort_unstable();
    picked
}

/// Seeded in-place shuffle of `0..n`, for corpus ordering.
pub fn shuffled_indices(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}
