//! Probabilistic decoding: the model network `p(z)`, `p(x|z)`, `p(t|z)`,
//! and the treatment-gated `p(y|z,t)`.

use alloc::vec::Vec;

use crate::nn::{LayoutBuilder, Mlp, MlpCache, LN_2PI};

#[derive(Debug, Clone, Copy)]
pub struct Decoder {
    pub latent: usize,
    pub out_dim: usize,
    pub classes: usize,
    /// Mean of the unit-variance Gaussian reconstruction of the frame slice.
    pub recon: Mlp,
    pub t_head: Mlp,
    /// Outcome heads: `y1` is the t=1 arm, `y0` the t=0 arm.
    pub y1: Mlp,
    pub y0: Mlp,
}

/// All decoder heads evaluated at one latent sample.
#[derive(Debug, Clone)]
pub struct DecoderOutputs {
    pub recon_mean: Vec<f64>,
    pub t_logit: f64,
    pub y_logits_t0: Vec<f64>,
    pub y_logits_t1: Vec<f64>,
}

impl DecoderOutputs {
    pub fn y_logits(&self, t: u8) -> &[f64] {
        if t == 1 {
            &self.y_logits_t1
        } else {
            &self.y_logits_t0
        }
    }
}

#[derive(Debug, Clone)]
pub struct DecoderFrameCache {
    pub z: Vec<f64>,
    pub t: u8,
    pub recon: MlpCache,
    pub t_head: MlpCache,
    pub y_sel: MlpCache,
}

impl Decoder {
    pub fn define(
        lb: &mut LayoutBuilder,
        latent: usize,
        hidden: usize,
        out_dim: usize,
        classes: usize,
    ) -> Self {
        Decoder {
            latent,
            out_dim,
            classes,
            recon: Mlp::define(lb, "decoder.recon", latent, hidden, out_dim),
            t_head: Mlp::define(lb, "decoder.t", latent, hidden, 1),
            y1: Mlp::define(lb, "decoder.y1", latent, hidden, classes),
            y0: Mlp::define(lb, "decoder.y0", latent, hidden, classes),
        }
    }

    pub fn decode_x(&self, params: &[f64], z: &[f64]) -> Vec<f64> {
        self.recon.infer(params, z)
    }

    pub fn decode_t(&self, params: &[f64], z: &[f64]) -> f64 {
        self.t_head.infer(params, z)[0]
    }

    /// Gated outcome logits `t f_y1(z) + (1 - t) f_y0(z)` for binary `t`.
    pub fn decode_y(&self, params: &[f64], z: &[f64], t: u8) -> Vec<f64> {
        if t == 1 {
            self.y1.infer(params, z)
        } else {
            self.y0.infer(params, z)
        }
    }

    pub fn decode_frame(&self, params: &[f64], z: &[f64], t: u8) -> (DecoderOutputs, DecoderFrameCache) {
        let (recon_mean, recon) = self.recon.forward(params, z);
        let (t_logit_v, t_head) = self.t_head.forward(params, z);
        let (y_logits_t1, c1) = self.y1.forward(params, z);
        let (y_logits_t0, c0) = self.y0.forward(params, z);
        let y_sel = if t == 1 { c1 } else { c0 };
        (
            DecoderOutputs { recon_mean, t_logit: t_logit_v[0], y_logits_t0, y_logits_t1 },
            DecoderFrameCache { z: z.to_vec(), t, recon, t_head, y_sel },
        )
    }

    /// Backward through the heads used by the loss; accumulates `dz`.
    pub fn decode_frame_backward(
        &self,
        params: &[f64],
        cache: &DecoderFrameCache,
        d_recon: &[f64],
        dt_logit: f64,
        dy_gated: &[f64],
        grad: &mut [f64],
        dz: &mut [f64],
    ) {
        self.recon.backward(params, &cache.recon, d_recon, grad, dz);
        self.t_head.backward(params, &cache.t_head, &[dt_logit], grad, dz);
        let y_head = if cache.t == 1 { self.y1 } else { self.y0 };
        y_head.backward(params, &cache.y_sel, dy_gated, grad, dz);
    }
}

/// Log density of the standard-normal prior, summed over coordinates.
pub fn log_prior(z: &[f64]) -> f64 {
    z.iter().map(|&v| -0.5 * (v * v + LN_2PI)).sum()
}
