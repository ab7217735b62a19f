//! The end-to-end model: fusion -> dual attention -> per-frame variational
//! encoder -> decoder, with the batch objective and its analytic gradient.
//!
//! The reconstruction target of `p(x|z)` is the fused feature map before
//! attention, treated as the observation: the objective conditions on the
//! observed proxy, so no gradient flows into the target side of the
//! reconstruction term. The fusion layer still trains through the encoder
//! and auxiliary paths. (Letting the target itself carry gradient rewards
//! collapsing the map to a constant, which stalls every other head.)

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // required by the no_std build; std test builds shadow it
use num_traits::Float;
use rand_chacha::ChaCha8Rng;

use crate::attention::{ChannelAttention, ChannelCache, SpatialAttention, SpatialCache};
use crate::dataset::QueryVideoPair;
use crate::decoder::{log_prior, Decoder, DecoderFrameCache, DecoderOutputs};
use crate::encoder::{sample_z, Encoder, EncoderFrameCache, EncoderUpstream};
use crate::error::{Error, Result};
use crate::features::{featurize_frames, FeaturizerConfig, Vocabulary};
use crate::fusion::{Fusion, FusionCache};
use crate::loss::{
    bernoulli_log_lik, categorical_log_lik, diag_gaussian_log_pdf, gaussian_recon_log_lik,
    KlMode, LossAccum,
};
use crate::nn::{logistic, softmax, LayoutBuilder, ParamLayout, LN_2PI};
use crate::rng;
use crate::types::FeatureMap;

/// Architecture hyperparameters. `frames` is the normalized video length;
/// tests truncate it freely.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub visual_dim: usize,
    /// Width of the query bag-of-words vector (vocabulary + OOV bucket).
    pub query_dim: usize,
    pub channels: usize,
    pub feat_dim: usize,
    pub upsample: usize,
    pub frames: usize,
    pub hidden: usize,
    pub rep_dim: usize,
    pub latent: usize,
    pub classes: usize,
    pub attention: bool,
    /// Channel width of the spatial query/key projections.
    pub attn_proj: usize,
    /// Monte-Carlo samples per frame per step.
    pub n_mc: usize,
    pub kl_mode: KlMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            visual_dim: 12,
            query_dim: 13,
            channels: 8,
            feat_dim: 16,
            upsample: 2,
            frames: crate::dataset::TARGET_FRAMES,
            hidden: 32,
            rep_dim: 24,
            latent: 8,
            classes: 3,
            attention: true,
            attn_proj: 1,
            n_mc: 1,
            kl_mode: KlMode::ClosedForm,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("visual_dim", self.visual_dim),
            ("query_dim", self.query_dim),
            ("channels", self.channels),
            ("feat_dim", self.feat_dim),
            ("upsample", self.upsample),
            ("frames", self.frames),
            ("hidden", self.hidden),
            ("rep_dim", self.rep_dim),
            ("latent", self.latent),
            ("attn_proj", self.attn_proj),
            ("n_mc", self.n_mc),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::BadConfig(alloc::format!("{name} must be positive")));
            }
        }
        if self.classes < 2 {
            return Err(Error::BadConfig("need at least two score classes".into()));
        }
        if self.feat_dim % self.upsample != 0 {
            return Err(Error::BadConfig(alloc::format!(
                "feat_dim {} not divisible by upsample {}",
                self.feat_dim,
                self.upsample
            )));
        }
        Ok(())
    }

    /// Width of one frame's feature slice.
    pub fn slice_dim(&self) -> usize {
        self.channels * self.feat_dim
    }
}

/// A featurized training example.
#[derive(Debug, Clone, PartialEq)]
pub struct PairExample {
    pub pair_id: String,
    pub frame_feats: Vec<Vec<f64>>,
    pub query_bow: Vec<f64>,
    pub treatments: Vec<u8>,
    pub labels: Vec<usize>,
}

/// Featurize one corpus pair against a fixed vocabulary.
pub fn prepare_pair(
    pair: &QueryVideoPair,
    vocab: &Vocabulary,
    feat_cfg: &FeaturizerConfig,
    frames: usize,
    classes: usize,
) -> Result<PairExample> {
    pair.validate(classes)?;
    let frame_feats = featurize_frames(&pair.frames, feat_cfg, frames)?;
    Ok(PairExample {
        pair_id: pair.pair_id.clone(),
        frame_feats,
        query_bow: vocab.bow(&pair.query),
        treatments: pair.treatments(),
        labels: pair.gold_labels()?,
    })
}

/// Pre-drawn reparameterization noise for one batch, one vector of length
/// `frames * n_mc * latent` per pair. Drawing up front keeps the objective a
/// deterministic function of the parameters, which the finite-difference
/// checks rely on.
#[derive(Debug, Clone)]
pub struct BatchNoise {
    pub per_pair: Vec<Vec<f64>>,
}

impl BatchNoise {
    pub fn generate(
        latent: usize,
        n_mc: usize,
        batch: &[PairExample],
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let per_pair = batch
            .iter()
            .map(|ex| {
                let mut v = vec![0.0; ex.frame_feats.len() * n_mc * latent];
                rng::fill_standard_normal(rng, &mut v);
                v
            })
            .collect();
        BatchNoise { per_pair }
    }

    pub fn zeros(latent: usize, n_mc: usize, batch: &[PairExample]) -> Self {
        BatchNoise {
            per_pair: batch
                .iter()
                .map(|ex| vec![0.0; ex.frame_feats.len() * n_mc * latent])
                .collect(),
        }
    }
}

struct SampleState {
    eps: Vec<f64>,
    z: Vec<f64>,
    dec: DecoderOutputs,
    dec_cache: DecoderFrameCache,
}

struct FrameState {
    x_target: Vec<f64>,
    t: u8,
    y: usize,
    mu: Vec<f64>,
    var: Vec<f64>,
    t_logit: f64,
    enc_cache: EncoderFrameCache,
    samples: Vec<SampleState>,
}

struct PairCaches {
    fusion: FusionCache,
    spatial: Option<SpatialCache>,
    channel: Option<ChannelCache>,
    frames: Vec<FrameState>,
}

#[derive(Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub layout: ParamLayout,
    pub fusion: Fusion,
    pub spatial: SpatialAttention,
    pub channel: ChannelAttention,
    pub encoder: Encoder,
    pub decoder: Decoder,
}

impl Model {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut lb = LayoutBuilder::new();
        let fusion = Fusion::define(
            &mut lb,
            cfg.channels,
            cfg.feat_dim,
            cfg.upsample,
            cfg.visual_dim,
            cfg.query_dim,
        )?;
        // Attention blocks are always laid out so checkpoints keep one shape
        // across the on/off ablation; with attention off they stay at init.
        let spatial = SpatialAttention::define(&mut lb, "attention.spatial", cfg.channels, cfg.attn_proj);
        let channel = ChannelAttention::define(&mut lb, "attention.channel", cfg.channels);
        let encoder = Encoder::define(
            &mut lb,
            cfg.slice_dim(),
            cfg.hidden,
            cfg.rep_dim,
            cfg.latent,
            cfg.classes,
        );
        let decoder = Decoder::define(&mut lb, cfg.latent, cfg.hidden, cfg.slice_dim(), cfg.classes);
        Ok(Model { cfg, layout: lb.finish(), fusion, spatial, channel, encoder, decoder })
    }

    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut params = crate::nn::init_params(&self.layout, seed);
        // Start the posterior variances small (logistic(-2) ~ 0.12): the
        // latent needs usable signal-to-noise before the divergence term
        // pushes variances toward one, or the decoder learns to ignore z.
        for name in ["encoder.g2.l2.b", "encoder.g4.l2.b"] {
            if let Some(block) = self.layout.block(name) {
                for v in block.slice_mut(&mut params) {
                    *v = -2.0;
                }
            }
        }
        params
    }

    pub fn noise_len(&self, ex: &PairExample) -> usize {
        ex.frame_feats.len() * self.cfg.n_mc * self.cfg.latent
    }

    /// Fused map and the encoder's (post-attention) view of it.
    pub fn feature_maps(&self, params: &[f64], ex: &PairExample) -> Result<(FeatureMap, FeatureMap)> {
        let (x_map, _) = self.fusion.forward(params, &ex.frame_feats, &ex.query_bow)?;
        if !x_map.is_finite() {
            return Err(Error::NonFinite("fused feature map"));
        }
        let enc_map = if self.cfg.attention {
            let (m1, _) = self.spatial.forward(params, &x_map)?;
            let (m2, _) = self.channel.forward(params, &m1)?;
            m2
        } else {
            x_map.clone()
        };
        Ok((x_map, enc_map))
    }

    fn forward_pair(
        &self,
        params: &[f64],
        ex: &PairExample,
        noise: &[f64],
        target: Option<&FeatureMap>,
        accum: &mut LossAccum,
    ) -> Result<PairCaches> {
        let n_frames = ex.frame_feats.len();
        if ex.treatments.len() != n_frames || ex.labels.len() != n_frames {
            return Err(Error::BadPair {
                pair_id: ex.pair_id.clone(),
                reason: "treatments/labels not aligned to frames",
            });
        }
        if noise.len() != self.noise_len(ex) {
            return Err(Error::DimMismatch {
                what: "noise buffer",
                expected: self.noise_len(ex),
                got: noise.len(),
            });
        }
        let (x_map, fusion_cache) = self.fusion.forward(params, &ex.frame_feats, &ex.query_bow)?;
        if !x_map.is_finite() {
            return Err(Error::NonFinite("fused feature map"));
        }
        let (enc_map, spatial_cache, channel_cache) = if self.cfg.attention {
            let (m1, sc) = self.spatial.forward(params, &x_map)?;
            let (m2, cc) = self.channel.forward(params, &m1)?;
            (m2, Some(sc), Some(cc))
        } else {
            (x_map.clone(), None, None)
        };

        let (latent, n_mc) = (self.cfg.latent, self.cfg.n_mc);
        let mut frames = Vec::with_capacity(n_frames);
        for i in 0..n_frames {
            let t = ex.treatments[i];
            let y = ex.labels[i];
            if y >= self.cfg.classes {
                return Err(Error::LabelOutOfRange { label: y, classes: self.cfg.classes });
            }
            let x_target = target.unwrap_or(&x_map).frame_slice(i);
            let x_enc = enc_map.frame_slice(i);
            let (post, enc_cache) = self.encoder.encode_frame(params, &x_enc, t);

            accum.aux_t += bernoulli_log_lik(t, post.t_logit);
            accum.aux_y += categorical_log_lik(y, &enc_cache.y_gated);

            let mut samples = Vec::with_capacity(n_mc);
            let mut recon_x = 0.0;
            let mut recon_t = 0.0;
            let mut recon_y = 0.0;
            let mut prior = 0.0;
            let mut entropy = 0.0;
            for s in 0..n_mc {
                let base = (i * n_mc + s) * latent;
                let eps = noise[base..base + latent].to_vec();
                let z = sample_z(&post.mu, &post.var, &eps);
                let (dec, dec_cache) = self.decoder.decode_frame(params, &z, t);
                recon_x += gaussian_recon_log_lik(&x_target, &dec.recon_mean);
                recon_t += bernoulli_log_lik(t, dec.t_logit);
                recon_y += categorical_log_lik(y, dec.y_logits(t));
                if self.cfg.kl_mode == KlMode::Sampled {
                    prior += log_prior(&z);
                    entropy -= diag_gaussian_log_pdf(&z, &post.mu, &post.var);
                }
                samples.push(SampleState { eps, z, dec, dec_cache });
            }
            let inv = 1.0 / n_mc as f64;
            accum.recon_x += recon_x * inv;
            accum.recon_t += recon_t * inv;
            accum.recon_y += recon_y * inv;
            match self.cfg.kl_mode {
                KlMode::Sampled => {
                    accum.log_prior += prior * inv;
                    accum.entropy += entropy * inv;
                }
                KlMode::ClosedForm => {
                    // E[log p(z)] and E[-log q(z)] in closed form.
                    accum.log_prior += post
                        .mu
                        .iter()
                        .zip(&post.var)
                        .map(|(&m, &v)| -0.5 * (m * m + v + LN_2PI))
                        .sum::<f64>();
                    accum.entropy +=
                        post.var.iter().map(|&v| 0.5 * (v.ln() + 1.0 + LN_2PI)).sum::<f64>();
                }
            }

            frames.push(FrameState {
                x_target,
                t,
                y,
                mu: post.mu,
                var: post.var,
                t_logit: post.t_logit,
                enc_cache,
                samples,
            });
        }
        accum.frames += n_frames;
        Ok(PairCaches { fusion: fusion_cache, spatial: spatial_cache, channel: channel_cache, frames })
    }

    /// Backward for one pair; every per-frame term carries weight `scale`.
    fn backward_pair(&self, params: &[f64], caches: &PairCaches, scale: f64, grad: &mut [f64]) {
        let cfg = &self.cfg;
        let latent = cfg.latent;
        let n_frames = caches.frames.len();
        let mut d_enc = FeatureMap::zeros(cfg.channels, n_frames, cfg.feat_dim);
        let mut d_x = FeatureMap::zeros(cfg.channels, n_frames, cfg.feat_dim);
        let per_sample = scale / cfg.n_mc as f64;

        for (i, fs) in caches.frames.iter().enumerate() {
            let mut dmu = vec![0.0; latent];
            let mut dvar = vec![0.0; latent];
            let mut dx_enc = vec![0.0; cfg.slice_dim()];

            for s in &fs.samples {
                let mut dz = vec![0.0; latent];
                // d log p(x|z) / d mean = (x - mean); the target is observed
                // data and carries no gradient.
                let d_recon: Vec<f64> = fs
                    .x_target
                    .iter()
                    .zip(&s.dec.recon_mean)
                    .map(|(&x, &m)| per_sample * (x - m))
                    .collect();
                let dt_dec = per_sample * (fs.t as f64 - logistic(s.dec.t_logit));
                let probs = softmax(s.dec.y_logits(fs.t));
                let dy_dec: Vec<f64> = probs
                    .iter()
                    .enumerate()
                    .map(|(c, &p)| per_sample * ((c == fs.y) as usize as f64 - p))
                    .collect();
                self.decoder.decode_frame_backward(
                    params,
                    &s.dec_cache,
                    &d_recon,
                    dt_dec,
                    &dy_dec,
                    grad,
                    &mut dz,
                );
                if cfg.kl_mode == KlMode::Sampled {
                    for l in 0..latent {
                        let d = s.z[l] - fs.mu[l];
                        let v = fs.var[l];
                        // log p(z) through z, then -log q(z) through z and
                        // through its explicit (mu, var) arguments.
                        dz[l] += per_sample * (-s.z[l]);
                        dz[l] += per_sample * (d / v);
                        dmu[l] += per_sample * (-d / v);
                        dvar[l] += per_sample * 0.5 * (1.0 / v - d * d / (v * v));
                    }
                }
                for l in 0..latent {
                    dmu[l] += dz[l];
                    dvar[l] += dz[l] * s.eps[l] / (2.0 * fs.var[l].sqrt());
                }
            }
            if cfg.kl_mode == KlMode::ClosedForm {
                for l in 0..latent {
                    dmu[l] += scale * (-fs.mu[l]);
                    dvar[l] += scale * (-0.5 + 0.5 / fs.var[l]);
                }
            }

            let dt_logit = scale * (fs.t as f64 - logistic(fs.t_logit));
            let probs = softmax(&fs.enc_cache.y_gated);
            let dy_gated: Vec<f64> = probs
                .iter()
                .enumerate()
                .map(|(c, &p)| scale * ((c == fs.y) as usize as f64 - p))
                .collect();
            let up = EncoderUpstream { dmu, dvar, dt_logit, dy_gated };
            self.encoder.encode_frame_backward(params, &fs.enc_cache, &up, grad, &mut dx_enc);

            d_enc.add_frame_slice(i, &dx_enc);
        }

        if let (Some(sc), Some(cc)) = (&caches.spatial, &caches.channel) {
            let mut d_mid = vec![0.0; d_enc.values().len()];
            self.channel.backward(params, cc, d_enc.values(), grad, &mut d_mid);
            self.spatial.backward(params, sc, &d_mid, grad, d_x.values_mut());
        } else {
            for (a, b) in d_x.values_mut().iter_mut().zip(d_enc.values()) {
                *a += b;
            }
        }
        self.fusion.backward(params, &caches.fusion, &d_x, grad);
    }

    /// Per-frame-mean objective over a batch. Pure in `(params, noise)`.
    pub fn batch_loss(
        &self,
        params: &[f64],
        batch: &[PairExample],
        noise: &BatchNoise,
    ) -> Result<LossAccum> {
        let mut accum = LossAccum::default();
        for (ex, n) in batch.iter().zip(&noise.per_pair) {
            self.forward_pair(params, ex, n, None, &mut accum)?;
        }
        if !accum.report().is_finite() {
            return Err(Error::NonFinite("batch objective"));
        }
        Ok(accum)
    }

    /// The fused maps of a batch, for pinning reconstruction targets.
    pub fn fused_maps(&self, params: &[f64], batch: &[PairExample]) -> Result<Vec<FeatureMap>> {
        batch
            .iter()
            .map(|ex| self.fusion.forward(params, &ex.frame_feats, &ex.query_bow).map(|(m, _)| m))
            .collect()
    }

    /// The objective with explicitly pinned reconstruction targets. With
    /// `targets = fused_maps(params, batch)` this equals [`Self::batch_loss`]
    /// exactly; finite-difference checks differentiate this function, since
    /// the analytic gradient treats the targets as observed.
    pub fn batch_loss_pinned(
        &self,
        params: &[f64],
        batch: &[PairExample],
        noise: &BatchNoise,
        targets: &[FeatureMap],
    ) -> Result<LossAccum> {
        let mut accum = LossAccum::default();
        for ((ex, n), t) in batch.iter().zip(&noise.per_pair).zip(targets) {
            self.forward_pair(params, ex, n, Some(t), &mut accum)?;
        }
        if !accum.report().is_finite() {
            return Err(Error::NonFinite("batch objective"));
        }
        Ok(accum)
    }

    /// Objective plus its full analytic gradient (of the maximized value).
    pub fn batch_loss_and_grad(
        &self,
        params: &[f64],
        batch: &[PairExample],
        noise: &BatchNoise,
    ) -> Result<(LossAccum, Vec<f64>)> {
        let total_frames: usize = batch.iter().map(|ex| ex.frame_feats.len()).sum();
        let scale = 1.0 / total_frames.max(1) as f64;
        let mut accum = LossAccum::default();
        let mut grad = vec![0.0; self.layout.total];
        for (ex, n) in batch.iter().zip(&noise.per_pair) {
            let caches = self.forward_pair(params, ex, n, None, &mut accum)?;
            self.backward_pair(params, &caches, scale, &mut grad);
        }
        if !accum.report().is_finite() {
            return Err(Error::NonFinite("batch objective"));
        }
        Ok((accum, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::random_params;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            visual_dim: 3,
            query_dim: 4,
            channels: 2,
            feat_dim: 4,
            upsample: 2,
            frames: 4,
            hidden: 5,
            rep_dim: 4,
            latent: 3,
            classes: 3,
            attention: true,
            attn_proj: 2,
            n_mc: 1,
            kl_mode: KlMode::ClosedForm,
        }
    }

    pub(crate) fn tiny_example(seed: u64, frames: usize, cfg: &ModelConfig) -> PairExample {
        let mut rng = rng::seeded(seed);
        use rand::Rng;
        PairExample {
            pair_id: alloc::format!("pair-{seed}"),
            frame_feats: (0..frames)
                .map(|_| (0..cfg.visual_dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect(),
            query_bow: (0..cfg.query_dim).map(|_| rng.gen_range(0.0..2.0)).collect(),
            treatments: (0..frames).map(|_| rng.gen_range(0..2) as u8).collect(),
            labels: (0..frames).map(|_| rng.gen_range(0..cfg.classes)).collect(),
        }
    }

    #[test]
    fn loss_is_deterministic_given_noise() {
        let model = Model::new(tiny_config()).unwrap();
        let params = model.init_params(3);
        let batch = alloc::vec![tiny_example(1, 4, &model.cfg), tiny_example(2, 4, &model.cfg)];
        let mut rng = rng::seeded(5);
        let noise = BatchNoise::generate(model.cfg.latent, model.cfg.n_mc, &batch, &mut rng);
        let a = model.batch_loss(&params, &batch, &noise).unwrap().report();
        let b = model.batch_loss(&params, &batch, &noise).unwrap().report();
        assert_eq!(a, b);
        assert_eq!(a.elbo, a.l_causal - a.l_auxiliary);
    }

    #[test]
    fn gradient_matches_loss_value_path() {
        // The gradient entry point must report the same objective.
        let model = Model::new(tiny_config()).unwrap();
        let params = random_params(&model.layout, 8, 0.4);
        let batch = alloc::vec![tiny_example(4, 4, &model.cfg)];
        let mut rng = rng::seeded(6);
        let noise = BatchNoise::generate(model.cfg.latent, model.cfg.n_mc, &batch, &mut rng);
        let a = model.batch_loss(&params, &batch, &noise).unwrap().report();
        let (accum, grad) = model.batch_loss_and_grad(&params, &batch, &noise).unwrap();
        assert_eq!(a, accum.report());
        assert_eq!(grad.len(), model.layout.total);
        assert!(grad.iter().any(|&g| g != 0.0));
    }

    #[test]
    fn attention_off_objective_has_no_attention_gradient() {
        let mut cfg = tiny_config();
        cfg.attention = false;
        let model = Model::new(cfg).unwrap();
        let params = random_params(&model.layout, 9, 0.4);
        let batch = alloc::vec![tiny_example(7, 4, &model.cfg)];
        let noise = BatchNoise::zeros(model.cfg.latent, model.cfg.n_mc, &batch);
        let (_, grad) = model.batch_loss_and_grad(&params, &batch, &noise).unwrap();
        for idx in model.layout.indices_with_prefix("attention") {
            assert_eq!(grad[idx], 0.0);
        }
    }

    #[test]
    fn gamma_zero_matches_attention_free_encoder() {
        let cfg = tiny_config();
        let model_on = Model::new(cfg.clone()).unwrap();
        let mut cfg_off = cfg;
        cfg_off.attention = false;
        let model_off = Model::new(cfg_off).unwrap();
        // Same layout by construction; zero the blend coefficients.
        let mut params = random_params(&model_on.layout, 10, 0.4);
        params[model_on.spatial.gamma.offset] = 0.0;
        params[model_on.channel.gamma.offset] = 0.0;
        let batch = alloc::vec![tiny_example(11, 4, &model_on.cfg)];
        let noise = BatchNoise::zeros(model_on.cfg.latent, model_on.cfg.n_mc, &batch);
        let a = model_on.batch_loss(&params, &batch, &noise).unwrap().report();
        let b = model_off.batch_loss(&params, &batch, &noise).unwrap().report();
        assert_eq!(a, b);
    }

    #[test]
    fn forced_arm_gets_zero_gradient() {
        // All treatments 1: the t=0 heads must receive no gradient.
        let model = Model::new(tiny_config()).unwrap();
        let params = random_params(&model.layout, 12, 0.4);
        let mut ex = tiny_example(13, 4, &model.cfg);
        ex.treatments = alloc::vec![1; 4];
        let batch = alloc::vec![ex];
        let mut rng = rng::seeded(14);
        let noise = BatchNoise::generate(model.cfg.latent, model.cfg.n_mc, &batch, &mut rng);
        let (_, grad) = model.batch_loss_and_grad(&params, &batch, &noise).unwrap();
        for prefix in ["encoder.g1", "encoder.g2", "encoder.g7", "decoder.y0"] {
            for idx in model.layout.indices_with_prefix(prefix) {
                assert_eq!(grad[idx], 0.0, "{prefix} leaked gradient");
            }
        }
        // The t=1 arms do learn.
        let active: f64 = model
            .layout
            .indices_with_prefix("encoder.g3")
            .iter()
            .map(|&i| grad[i].abs())
            .sum();
        assert!(active > 0.0);
    }

    #[test]
    fn sampled_and_closed_kl_agree_in_expectation() {
        let cfg = tiny_config();
        let mut cfg_s = cfg.clone();
        cfg_s.kl_mode = KlMode::Sampled;
        let closed = Model::new(cfg).unwrap();
        let sampled = Model::new(cfg_s).unwrap();
        let params = random_params(&closed.layout, 15, 0.4);
        let batch = alloc::vec![tiny_example(16, 4, &closed.cfg)];
        let mut rng = rng::seeded(17);
        let noise0 = BatchNoise::generate(closed.cfg.latent, closed.cfg.n_mc, &batch, &mut rng);
        let base = closed.batch_loss(&params, &batch, &noise0).unwrap().report();
        // Average the sampled estimate over many noise draws.
        let mut acc = 0.0;
        let reps = 3000;
        for _ in 0..reps {
            let noise = BatchNoise::generate(closed.cfg.latent, closed.cfg.n_mc, &batch, &mut rng);
            let r = sampled.batch_loss(&params, &batch, &noise).unwrap().report();
            acc += r.log_prior_term + r.entropy_term;
        }
        let mc = acc / reps as f64;
        let cf = base.log_prior_term + base.entropy_term;
        assert!((mc - cf).abs() < 0.05, "sampled {mc} vs closed {cf}");
    }
}
