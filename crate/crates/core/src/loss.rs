//! Probability terms and per-batch loss accounting.
//!
//! The training objective is maximized: the sum of the auxiliary treatment
//! and outcome log-likelihoods plus the expected reconstruction terms and
//! the (negative) divergence between the posterior and the standard-normal
//! prior. All reported quantities are per-frame batch means in nats, and
//! the reported lower bound is defined as `l_causal - l_auxiliary`, so that
//! identity holds bit-exactly on every report.

#[allow(unused_imports)] // required by the no_std build; std test builds shadow it
use num_traits::Float;
use rand_chacha::ChaCha8Rng;

use crate::nn::{logsumexp, softplus, LN_2PI};
use crate::rng;

/// `log Bern(t | logistic(logit))` for binary `t`.
pub fn bernoulli_log_lik(t: u8, logit: f64) -> f64 {
    if t == 1 {
        -softplus(-logit)
    } else {
        -softplus(logit)
    }
}

/// Categorical log-likelihood of class `y` under unnormalized logits.
pub fn categorical_log_lik(y: usize, logits: &[f64]) -> f64 {
    logits[y] - logsumexp(logits)
}

/// Unit-variance Gaussian reconstruction log-likelihood of a frame slice.
pub fn gaussian_recon_log_lik(x: &[f64], mean: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), mean.len());
    let sq: f64 = x.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
    -0.5 * sq - 0.5 * x.len() as f64 * LN_2PI
}

/// Log density of a diagonal Gaussian at `z`.
pub fn diag_gaussian_log_pdf(z: &[f64], mu: &[f64], var: &[f64]) -> f64 {
    z.iter()
        .zip(mu)
        .zip(var)
        .map(|((&z, &m), &v)| -0.5 * ((z - m) * (z - m) / v + v.ln() + LN_2PI))
        .sum()
}

/// Closed-form `KL(N(mu, var) || N(0, I))` for diagonal Gaussians.
pub fn kl_diag_gaussian(mu: &[f64], var: &[f64]) -> f64 {
    mu.iter().zip(var).map(|(&m, &v)| 0.5 * (m * m + v - 1.0 - v.ln())).sum()
}

/// Monte-Carlo estimate of the same divergence as `E_q[log q - log p]`,
/// with its standard error. Used to cross-check the closed form.
pub fn kl_diag_gaussian_mc(
    mu: &[f64],
    var: &[f64],
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> (f64, f64) {
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    let mut noise = alloc::vec![0.0; mu.len()];
    for _ in 0..samples {
        rng::fill_standard_normal(rng, &mut noise);
        let z = crate::encoder::sample_z(mu, var, &noise);
        let v = diag_gaussian_log_pdf(&z, mu, var) - crate::decoder::log_prior(&z);
        sum += v;
        sumsq += v * v;
    }
    let n = samples as f64;
    let mean = sum / n;
    let variance = (sumsq / n - mean * mean).max(0.0);
    (mean, (variance / n).sqrt())
}

/// How the prior/entropy pair is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KlMode {
    /// Closed-form divergence (default; lower variance).
    ClosedForm,
    /// Single-sample estimate `log p(z) - log q(z)` at the drawn z.
    Sampled,
}

/// Per-batch objective breakdown; every field is a per-frame mean in nats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub aux_t: f64,
    pub aux_y: f64,
    pub recon_x: f64,
    pub recon_t: f64,
    pub recon_y: f64,
    pub log_prior_term: f64,
    pub entropy_term: f64,
    pub l_auxiliary: f64,
    pub l_causal: f64,
    pub elbo: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [
            self.aux_t,
            self.aux_y,
            self.recon_x,
            self.recon_t,
            self.recon_y,
            self.log_prior_term,
            self.entropy_term,
            self.l_auxiliary,
            self.l_causal,
            self.elbo,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Running sums over frames; divides out to a [`LossReport`].
#[derive(Debug, Clone, Copy, Default)]
pub struct LossAccum {
    pub frames: usize,
    pub aux_t: f64,
    pub aux_y: f64,
    pub recon_x: f64,
    pub recon_t: f64,
    pub recon_y: f64,
    pub log_prior: f64,
    pub entropy: f64,
}

impl LossAccum {
    pub fn merge(&mut self, other: &LossAccum) {
        self.frames += other.frames;
        self.aux_t += other.aux_t;
        self.aux_y += other.aux_y;
        self.recon_x += other.recon_x;
        self.recon_t += other.recon_t;
        self.recon_y += other.recon_y;
        self.log_prior += other.log_prior;
        self.entropy += other.entropy;
    }

    pub fn report(&self) -> LossReport {
        let n = self.frames.max(1) as f64;
        let aux_t = self.aux_t / n;
        let aux_y = self.aux_y / n;
        let recon_x = self.recon_x / n;
        let recon_t = self.recon_t / n;
        let recon_y = self.recon_y / n;
        let log_prior_term = self.log_prior / n;
        let entropy_term = self.entropy / n;
        let l_auxiliary = aux_t + aux_y;
        let l_causal =
            l_auxiliary + recon_x + recon_t + recon_y + log_prior_term + entropy_term;
        LossReport {
            aux_t,
            aux_y,
            recon_x,
            recon_t,
            recon_y,
            log_prior_term,
            entropy_term,
            l_auxiliary,
            l_causal,
            elbo: l_causal - l_auxiliary,
        }
    }
}
