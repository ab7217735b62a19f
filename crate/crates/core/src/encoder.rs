//! Probabilistic encoding: the inference network producing the treatment
//! posterior `q(t|x)`, the outcome posterior `q(y|x,t)`, and the
//! treatment-gated diagonal-Gaussian posterior `q(z|x,y,t)` per frame.
//!
//! Eight small perceptrons operate on a frame's feature slice: one head for
//! the treatment logit, two outcome heads (one per treatment arm), a shared
//! representation whose input is the feature slice multiplied by a learned
//! projection of the pre-activation outcome logits, and four heads mapping
//! the shared representation to the two (mean, variance) arms. Variances are
//! squashed through a logistic, so they always lie in `(0, 1)`, with a small
//! floor against collapse.

use alloc::vec::Vec;
#[allow(unused_imports)] // required by the no_std build; std test builds shadow it
use num_traits::Float;

use crate::nn::{logistic, LayoutBuilder, Mlp, MlpCache};

/// Variances are clamped to `[VAR_FLOOR, 1 - VAR_FLOOR]`: the floor guards
/// against degenerate collapse, the ceiling keeps the logistic-squashed
/// value strictly inside the unit interval even when the head saturates.
pub const VAR_FLOOR: f64 = 1e-6;

fn squash_var(raw: f64) -> f64 {
    logistic(raw).clamp(VAR_FLOOR, 1.0 - VAR_FLOOR)
}

#[derive(Debug, Clone, Copy)]
pub struct Encoder {
    pub in_dim: usize,
    pub rep_dim: usize,
    pub latent: usize,
    pub classes: usize,
    /// Shared representation over the (feature x outcome) product.
    pub g0: Mlp,
    /// Mean and variance heads, t=0 arm.
    pub g1: Mlp,
    pub g2: Mlp,
    /// Mean and variance heads, t=1 arm.
    pub g3: Mlp,
    pub g4: Mlp,
    /// Treatment logit head.
    pub g5: Mlp,
    /// Outcome heads: `g6` is the t=1 arm, `g7` the t=0 arm.
    pub g6: Mlp,
    pub g7: Mlp,
    /// Bias-free map from outcome logits to the feature width.
    pub y_proj: crate::nn::Block,
}

/// Per-frame posterior parameters: both treatment arms plus the gated
/// selection for the observed (or inferred) treatment.
#[derive(Debug, Clone)]
pub struct PosteriorParams {
    pub t_logit: f64,
    pub y_logits_t0: Vec<f64>,
    pub y_logits_t1: Vec<f64>,
    pub mu_t0: Vec<f64>,
    pub var_t0: Vec<f64>,
    pub mu_t1: Vec<f64>,
    pub var_t1: Vec<f64>,
    /// Gated mean and variance for the treatment passed to `encode_frame`.
    pub mu: Vec<f64>,
    pub var: Vec<f64>,
}

impl PosteriorParams {
    pub fn y_logits(&self, t: u8) -> &[f64] {
        if t == 1 {
            &self.y_logits_t1
        } else {
            &self.y_logits_t0
        }
    }
}

/// Activations retained for the backward pass. Only the arms selected by the
/// treatment are cached; the other arms receive no gradient.
#[derive(Debug, Clone)]
pub struct EncoderFrameCache {
    pub x: Vec<f64>,
    pub t: u8,
    pub g5: MlpCache,
    pub y_sel: MlpCache,
    pub y_gated: Vec<f64>,
    /// `y_proj . y_gated`
    pub proj: Vec<f64>,
    /// `x (*) proj`
    pub shared_in: Vec<f64>,
    pub g0: MlpCache,
    pub h: Vec<f64>,
    pub mu_sel: MlpCache,
    pub var_sel: MlpCache,
    /// Logistic output of the selected variance head, before flooring.
    pub var_sig: Vec<f64>,
}

/// Gradients flowing into a frame's encoder outputs.
#[derive(Debug, Clone)]
pub struct EncoderUpstream {
    pub dmu: Vec<f64>,
    pub dvar: Vec<f64>,
    pub dt_logit: f64,
    /// External gradient on the gated outcome logits.
    pub dy_gated: Vec<f64>,
}

impl Encoder {
    pub fn define(
        lb: &mut LayoutBuilder,
        in_dim: usize,
        hidden: usize,
        rep_dim: usize,
        latent: usize,
        classes: usize,
    ) -> Self {
        Encoder {
            in_dim,
            rep_dim,
            latent,
            classes,
            g0: Mlp::define(lb, "encoder.g0", in_dim, hidden, rep_dim),
            g1: Mlp::define(lb, "encoder.g1", rep_dim, hidden, latent),
            g2: Mlp::define(lb, "encoder.g2", rep_dim, hidden, latent),
            g3: Mlp::define(lb, "encoder.g3", rep_dim, hidden, latent),
            g4: Mlp::define(lb, "encoder.g4", rep_dim, hidden, latent),
            g5: Mlp::define(lb, "encoder.g5", in_dim, hidden, 1),
            g6: Mlp::define(lb, "encoder.g6", in_dim, hidden, classes),
            g7: Mlp::define(lb, "encoder.g7", in_dim, hidden, classes),
            y_proj: lb.matrix("encoder.y_proj", in_dim, classes),
        }
    }

    /// Treatment logit; `q(t=1|x)` is its logistic.
    pub fn encode_t(&self, params: &[f64], x: &[f64]) -> f64 {
        self.g5.infer(params, x)[0]
    }

    /// Gated outcome logits for the given treatment arm.
    pub fn encode_y(&self, params: &[f64], x: &[f64], t: u8) -> Vec<f64> {
        if t == 1 {
            self.g6.infer(params, x)
        } else {
            self.g7.infer(params, x)
        }
    }

    /// The multiplicative input of the shared representation: the feature
    /// slice scaled elementwise by the projected pre-activation logits.
    pub fn shared_input(&self, params: &[f64], x: &[f64], y_logits: &[f64]) -> Vec<f64> {
        let w = self.y_proj.slice(params);
        let mut out = Vec::with_capacity(self.in_dim);
        for (j, &xv) in x.iter().enumerate() {
            let row = &w[j * self.classes..(j + 1) * self.classes];
            let p: f64 = row.iter().zip(y_logits).map(|(a, b)| a * b).sum();
            out.push(xv * p);
        }
        out
    }

    /// Shared representation `g0(x (*) proj(y_logits))`.
    pub fn shared_rep(&self, params: &[f64], x: &[f64], y_logits: &[f64]) -> Vec<f64> {
        self.g0.infer(params, &self.shared_input(params, x, y_logits))
    }

    fn heads_from_rep(&self, params: &[f64], h: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let mu_t0 = self.g1.infer(params, h);
        let var_t0: Vec<f64> = self.g2.infer(params, h).iter().map(|&r| squash_var(r)).collect();
        let mu_t1 = self.g3.infer(params, h);
        let var_t1: Vec<f64> = self.g4.infer(params, h).iter().map(|&r| squash_var(r)).collect();
        (mu_t0, var_t0, mu_t1, var_t1)
    }

    /// Full posterior for one frame without retaining backward state.
    pub fn posterior(&self, params: &[f64], x: &[f64], t: u8) -> PosteriorParams {
        let t_logit = self.encode_t(params, x);
        let y_logits_t0 = self.g7.infer(params, x);
        let y_logits_t1 = self.g6.infer(params, x);
        let gated = if t == 1 { &y_logits_t1 } else { &y_logits_t0 };
        let h = self.shared_rep(params, x, gated);
        let (mu_t0, var_t0, mu_t1, var_t1) = self.heads_from_rep(params, &h);
        let (mu, var) = if t == 1 {
            (mu_t1.clone(), var_t1.clone())
        } else {
            (mu_t0.clone(), var_t0.clone())
        };
        PosteriorParams { t_logit, y_logits_t0, y_logits_t1, mu_t0, var_t0, mu_t1, var_t1, mu, var }
    }

    /// Forward pass for training: posterior plus the caches backward needs.
    pub fn encode_frame(&self, params: &[f64], x: &[f64], t: u8) -> (PosteriorParams, EncoderFrameCache) {
        let (t_logit_v, g5) = self.g5.forward(params, x);
        let t_logit = t_logit_v[0];
        let (y_logits_t1, c6) = self.g6.forward(params, x);
        let (y_logits_t0, c7) = self.g7.forward(params, x);
        let (y_gated, y_sel) =
            if t == 1 { (y_logits_t1.clone(), c6) } else { (y_logits_t0.clone(), c7) };

        let w = self.y_proj.slice(params);
        let mut proj = Vec::with_capacity(self.in_dim);
        for j in 0..self.in_dim {
            let row = &w[j * self.classes..(j + 1) * self.classes];
            proj.push(row.iter().zip(&y_gated).map(|(a, b)| a * b).sum());
        }
        let shared_in: Vec<f64> = x.iter().zip(&proj).map(|(a, b)| a * b).collect();
        let (h, g0) = self.g0.forward(params, &shared_in);

        let (mu_t0_v, c1) = self.g1.forward(params, &h);
        let (var_t0_raw, c2) = self.g2.forward(params, &h);
        let (mu_t1_v, c3) = self.g3.forward(params, &h);
        let (var_t1_raw, c4) = self.g4.forward(params, &h);
        let sig = |raw: &[f64]| raw.iter().map(|&r| logistic(r)).collect::<Vec<f64>>();
        let clamp = |s: &[f64]| {
            s.iter().map(|&v| v.clamp(VAR_FLOOR, 1.0 - VAR_FLOOR)).collect::<Vec<f64>>()
        };
        let var_t0_sig = sig(&var_t0_raw);
        let var_t1_sig = sig(&var_t1_raw);
        let var_t0 = clamp(&var_t0_sig);
        let var_t1 = clamp(&var_t1_sig);

        let (mu, var, mu_sel, var_sel, var_sig) = if t == 1 {
            (mu_t1_v.clone(), var_t1.clone(), c3, c4, var_t1_sig)
        } else {
            (mu_t0_v.clone(), var_t0.clone(), c1, c2, var_t0_sig)
        };

        let post = PosteriorParams {
            t_logit,
            y_logits_t0,
            y_logits_t1,
            mu_t0: mu_t0_v,
            var_t0,
            mu_t1: mu_t1_v,
            var_t1,
            mu,
            var,
        };
        let cache = EncoderFrameCache {
            x: x.to_vec(),
            t,
            g5,
            y_sel,
            y_gated,
            proj,
            shared_in,
            g0,
            h,
            mu_sel,
            var_sel,
            var_sig,
        };
        (post, cache)
    }

    /// Backward: routes gradients through the gated arms only and
    /// accumulates the frame-slice gradient into `dx`.
    pub fn encode_frame_backward(
        &self,
        params: &[f64],
        cache: &EncoderFrameCache,
        up: &EncoderUpstream,
        grad: &mut [f64],
        dx: &mut [f64],
    ) {
        let mut dh = alloc::vec![0.0; self.rep_dim];
        let (g_mu, g_var) = if cache.t == 1 { (self.g3, self.g4) } else { (self.g1, self.g2) };
        g_mu.backward(params, &cache.mu_sel, &up.dmu, grad, &mut dh);
        let draw: Vec<f64> = up
            .dvar
            .iter()
            .zip(&cache.var_sig)
            .map(|(&dv, &s)| {
                if s > VAR_FLOOR && s < 1.0 - VAR_FLOOR {
                    dv * s * (1.0 - s)
                } else {
                    0.0
                }
            })
            .collect();
        g_var.backward(params, &cache.var_sel, &draw, grad, &mut dh);

        let mut dshared_in = alloc::vec![0.0; self.in_dim];
        self.g0.backward(params, &cache.g0, &dh, grad, &mut dshared_in);

        // Product rule through shared_in = x (*) proj.
        let mut dy_gated = up.dy_gated.clone();
        let w = self.y_proj.slice(params);
        for j in 0..self.in_dim {
            let ds = dshared_in[j];
            dx[j] += ds * cache.proj[j];
            let dproj = ds * cache.x[j];
            let row = &w[j * self.classes..(j + 1) * self.classes];
            for s in 0..self.classes {
                grad[self.y_proj.offset + j * self.classes + s] += dproj * cache.y_gated[s];
                dy_gated[s] += row[s] * dproj;
            }
        }

        let y_head = if cache.t == 1 { self.g6 } else { self.g7 };
        y_head.backward(params, &cache.y_sel, &dy_gated, grad, dx);
        self.g5.backward(params, &cache.g5, &[up.dt_logit], grad, dx);
    }
}

/// Reparameterized sample `z = mu + sqrt(var) (*) noise`.
pub fn sample_z(mu: &[f64], var: &[f64], noise: &[f64]) -> Vec<f64> {
    mu.iter().zip(var).zip(noise).map(|((&m, &v), &e)| m + v.sqrt() * e).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{random_params, LayoutBuilder, ParamLayout};
    use crate::rng;
    use alloc::vec;

    fn build(in_dim: usize, classes: usize, latent: usize) -> (Encoder, ParamLayout) {
        let mut lb = LayoutBuilder::new();
        let enc = Encoder::define(&mut lb, in_dim, 6, 5, latent, classes);
        (enc, lb.finish())
    }

    #[test]
    fn gate_identities_hold_bit_exactly() {
        let (enc, layout) = build(4, 3, 2);
        for seed in 0..50 {
            let params = random_params(&layout, seed, 0.9);
            let x = random_params(
                &{
                    let mut lb = LayoutBuilder::new();
                    lb.vector("x", 4);
                    lb.finish()
                },
                seed + 1000,
                1.0,
            );
            let p1 = enc.posterior(&params, &x, 1);
            assert_eq!(p1.mu, p1.mu_t1);
            assert_eq!(p1.var, p1.var_t1);
            assert_eq!(enc.encode_y(&params, &x, 1), enc.g6.infer(&params, &x));
            let p0 = enc.posterior(&params, &x, 0);
            assert_eq!(p0.mu, p0.mu_t0);
            assert_eq!(p0.var, p0.var_t0);
            assert_eq!(enc.encode_y(&params, &x, 0), enc.g7.infer(&params, &x));
        }
    }

    #[test]
    fn variances_stay_in_unit_interval() {
        let (enc, layout) = build(4, 2, 3);
        for seed in 0..20 {
            let params = random_params(&layout, seed, 2.0);
            let x = vec![0.5, -1.0, 2.0, 0.1];
            let p = enc.posterior(&params, &x, (seed % 2) as u8);
            for v in p.var_t0.iter().chain(&p.var_t1) {
                assert!(*v >= VAR_FLOOR && *v <= 1.0 - VAR_FLOOR, "variance {v}");
            }
        }
    }

    #[test]
    fn zero_parameters_give_logit_zero() {
        let (enc, layout) = build(3, 2, 2);
        let params = vec![0.0; layout.total];
        let x = vec![0.4, -0.2, 0.9];
        assert_eq!(enc.encode_t(&params, &x), 0.0);
        assert_eq!(logistic(enc.encode_t(&params, &x)), 0.5);
        assert!((logistic(20.0) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn shared_input_multiplies_feature_by_projected_logits() {
        // classes == in_dim, identity projection, logits all one: the
        // product reduces to the feature slice itself.
        let (enc, layout) = build(3, 3, 2);
        let mut params = vec![0.0; layout.total];
        for j in 0..3 {
            params[enc.y_proj.offset + j * 3 + j] = 1.0;
        }
        let x = vec![0.7, -0.3, 0.2];
        let ones = vec![1.0, 1.0, 1.0];
        assert_eq!(enc.shared_input(&params, &x, &ones), x);
        // All-zero logits annihilate the input.
        let zeros = vec![0.0; 3];
        assert!(enc.shared_input(&params, &x, &zeros).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sample_z_reparameterization() {
        let mu = vec![0.3, -1.2];
        let var = vec![0.25, 0.04];
        assert_eq!(sample_z(&mu, &var, &[0.0, 0.0]), mu);
        // Degenerate variance collapses to the mean.
        let z = sample_z(&mu, &[0.0, 0.0], &[3.0, -2.0]);
        assert_eq!(z, mu);
        // CLT bound on the empirical mean over 1e5 draws.
        let n = 100_000;
        let mut rng = rng::seeded(9);
        let mut sums = [0.0f64; 2];
        for _ in 0..n {
            let noise = [rng::standard_normal(&mut rng), rng::standard_normal(&mut rng)];
            let z = sample_z(&mu, &var, &noise);
            sums[0] += z[0];
            sums[1] += z[1];
        }
        for l in 0..2 {
            let emp = sums[l] / n as f64;
            let bound = 3.0 * (var[l] / n as f64).sqrt();
            assert!((emp - mu[l]).abs() <= bound, "dim {l}: {} vs {}", emp, mu[l]);
        }
    }

    #[test]
    fn posterior_matches_encode_frame() {
        let (enc, layout) = build(4, 3, 2);
        let params = random_params(&layout, 77, 0.8);
        let x = vec![0.1, 0.9, -0.5, 0.3];
        for t in [0u8, 1u8] {
            let a = enc.posterior(&params, &x, t);
            let (b, _) = enc.encode_frame(&params, &x, t);
            assert_eq!(a.mu, b.mu);
            assert_eq!(a.var, b.var);
            assert_eq!(a.t_logit, b.t_logit);
            assert_eq!(a.y_logits_t0, b.y_logits_t0);
            assert_eq!(a.y_logits_t1, b.y_logits_t1);
        }
    }
}
