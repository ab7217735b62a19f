//! End-to-end gradient checks: the analytic gradient of the full objective
//! against central finite differences on a truncated instance (2 pairs,
//! 4 frames, latent 3). The finite-difference oracle differentiates
//! `batch_loss_pinned`, whose targets are held at the base parameters,
//! matching the objective's observed-proxy semantics.

use vidsum_core::loss::KlMode;
use vidsum_core::model::{BatchNoise, Model, ModelConfig, PairExample};
use vidsum_core::nn::random_params;
use vidsum_core::rng;
use vidsum_core::testkit::{central_diff, grads_close, random_example, sample_param_indices};

fn gradcheck_config(attention: bool, kl_mode: KlMode, n_mc: usize) -> ModelConfig {
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
        attention,
        attn_proj: 2,
        n_mc,
        kl_mode,
    }
}

fn two_pair_batch(cfg: &ModelConfig) -> Vec<PairExample> {
    vec![random_example(cfg, cfg.frames, 41), random_example(cfg, cfg.frames, 42)]
}

fn check_all_params(cfg: ModelConfig, seed: u64) {
    let model = Model::new(cfg).unwrap();
    let params = random_params(&model.layout, seed, 0.6);
    let batch = two_pair_batch(&model.cfg);
    let mut noise_rng = rng::seeded(seed + 7);
    let noise = BatchNoise::generate(model.cfg.latent, model.cfg.n_mc, &batch, &mut noise_rng);
    let targets = model.fused_maps(&params, &batch).unwrap();

    // Pinned and live objectives agree at the base point.
    let live = model.batch_loss(&params, &batch, &noise).unwrap().report();
    let pinned = model.batch_loss_pinned(&params, &batch, &noise, &targets).unwrap().report();
    assert_eq!(live, pinned);

    let (_, grad) = model.batch_loss_and_grad(&params, &batch, &noise).unwrap();
    let loss = |p: &[f64]| {
        model.batch_loss_pinned(p, &batch, &noise, &targets).unwrap().report().l_causal
    };
    let mut worst: (f64, usize) = (0.0, usize::MAX);
    for i in 0..model.layout.total {
        let fd = central_diff(loss, &params, i);
        assert!(
            grads_close(grad[i], fd, 1e-3, 1e-8),
            "param {i} ({}): analytic {} vs fd {fd}",
            block_of(&model, i),
            grad[i]
        );
        let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-12);
        if rel > worst.0 {
            worst = (rel, i);
        }
    }
    assert!(worst.0 <= 1e-3, "worst relative error {} at {}", worst.0, worst.1);
}

fn block_of(model: &Model, index: usize) -> String {
    for (name, b) in &model.layout.blocks {
        if index >= b.offset && index < b.offset + b.len() {
            return name.clone();
        }
    }
    String::from("?")
}

#[test]
fn full_objective_gradient_attention_on() {
    check_all_params(gradcheck_config(true, KlMode::ClosedForm, 1), 3);
}

#[test]
fn full_objective_gradient_attention_off() {
    check_all_params(gradcheck_config(false, KlMode::ClosedForm, 1), 4);
}

#[test]
fn full_objective_gradient_sampled_kl() {
    check_all_params(gradcheck_config(true, KlMode::Sampled, 1), 5);
}

#[test]
fn full_objective_gradient_two_mc_samples() {
    check_all_params(gradcheck_config(true, KlMode::ClosedForm, 2), 6);
}

#[test]
fn every_module_receives_gradient() {
    // Gradient flows into both the feature path and the outcome path of the
    // shared representation, and into every module's blocks.
    let model = Model::new(gradcheck_config(true, KlMode::ClosedForm, 1)).unwrap();
    let params = random_params(&model.layout, 9, 0.6);
    let batch = two_pair_batch(&model.cfg);
    let mut noise_rng = rng::seeded(11);
    let noise = BatchNoise::generate(model.cfg.latent, model.cfg.n_mc, &batch, &mut noise_rng);
    let (_, grad) = model.batch_loss_and_grad(&params, &batch, &noise).unwrap();
    for prefix in ["fusion", "attention.spatial", "attention.channel", "encoder.g0", "encoder.g5", "encoder.y_proj", "decoder.recon", "decoder.t"] {
        let total: f64 =
            model.layout.indices_with_prefix(prefix).iter().map(|&i| grad[i].abs()).sum();
        assert!(total > 0.0, "no gradient reached {prefix}");
    }
    // Both outcome arms appear across the batch (treatments mix 0 and 1).
    let arms: f64 = model
        .layout
        .indices_with_prefix("encoder.g6")
        .iter()
        .chain(model.layout.indices_with_prefix("encoder.g7").iter())
        .map(|&i| grad[i].abs())
        .sum();
    assert!(arms > 0.0);
}

#[test]
fn sampled_subset_matches_at_spec_tolerance() {
    // The acceptance-style check: >= 20 random parameters per module at
    // rtol 1e-3, on the truncated instance.
    let model = Model::new(gradcheck_config(true, KlMode::ClosedForm, 1)).unwrap();
    let params = random_params(&model.layout, 21, 0.6);
    let batch = two_pair_batch(&model.cfg);
    let mut noise_rng = rng::seeded(22);
    let noise = BatchNoise::generate(model.cfg.latent, model.cfg.n_mc, &batch, &mut noise_rng);
    let targets = model.fused_maps(&params, &batch).unwrap();
    let (_, grad) = model.batch_loss_and_grad(&params, &batch, &noise).unwrap();
    let loss = |p: &[f64]| {
        model.batch_loss_pinned(p, &batch, &noise, &targets).unwrap().report().l_causal
    };
    for (module, prefix) in
        [("fusion", "fusion"), ("attention", "attention"), ("encoder", "encoder"), ("decoder", "decoder")]
    {
        let pool = model.layout.indices_with_prefix(prefix);
        let picked = sample_param_indices(&pool, 20, 100 + prefix.len() as u64);
        assert!(!picked.is_empty());
        for i in picked {
            let fd = central_diff(loss, &params, i);
            assert!(grads_close(grad[i], fd, 1e-3, 1e-8), "{module} param {i}");
        }
    }
}
