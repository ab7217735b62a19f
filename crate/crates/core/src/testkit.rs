//! Test-only helpers, behind the `testkit` feature: a central
//! finite-difference oracle (independent of any backward pass) and random
//! model instances for gradient and property checks.

use alloc::vec::Vec;
use rand::Rng;

use crate::model::{ModelConfig, PairExample};
use crate::rng;

/// Central finite difference of `f` in coordinate `i` at `params`.
pub fn central_diff<F: FnMut(&[f64]) -> f64>(mut f: F, params: &[f64], i: usize) -> f64 {
    let h = 1e-5 * params[i].abs().max(1.0);
    let mut p = params.to_vec();
    p[i] = params[i] + h;
    let up = f(&p);
    p[i] = params[i] - h;
    let down = f(&p);
    (up - down) / (2.0 * h)
}

/// Relative agreement used by the gradient checks.
pub fn grads_close(analytic: f64, fd: f64, rtol: f64, atol: f64) -> bool {
    (analytic - fd).abs() <= rtol * analytic.abs().max(fd.abs()) + atol
}

/// A random featurized example with `frames` frames for the given config.
pub fn random_example(cfg: &ModelConfig, frames: usize, seed: u64) -> PairExample {
    let mut rng = rng::seeded(seed);
    PairExample {
        pair_id: alloc::format!("gradcheck-{seed}"),
        frame_feats: (0..frames)
            .map(|_| (0..cfg.visual_dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect(),
        query_bow: (0..cfg.query_dim).map(|_| rng.gen_range(0.0..2.0)).collect(),
        treatments: (0..frames).map(|_| rng.gen_range(0..2) as u8).collect(),
        labels: (0..frames).map(|_| rng.gen_range(0..cfg.classes)).collect(),
    }
}

/// `count` distinct indices sampled from `pool`, seeded.
pub fn sample_param_indices(pool: &[usize], count: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng::seeded(seed);
    let picked = rng::sample_indices(&mut rng, pool.len(), count.min(pool.len()));
    picked.into_iter().map(|i| pool[i]).collect()
}
