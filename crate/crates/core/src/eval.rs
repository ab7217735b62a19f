//! Inference, budgeted summary selection, and scoring.
//!
//! Inference never reads stored treatment bits: the treatment is inferred
//! from `q(t|x)` (mean-rounded), the latent is taken at the posterior mean,
//! and the decoder's gated outcome head produces per-frame class
//! probabilities. A Monte-Carlo-averaged variant is available for
//! sensitivity checks.

use alloc::string::String;
use alloc::vec::Vec;

use crate::encoder::sample_z;
use crate::error::{Error, Result};
use crate::model::{Model, PairExample};
use crate::nn::{logistic, softmax};
use crate::rng;

/// Per-frame prediction: argmax class (ties to the smaller class) plus the
/// full probability vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePrediction {
    pub class: usize,
    pub probs: Vec<f64>,
}

fn argmax_smallest_tie(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

fn predict_with<F>(model: &Model, params: &[f64], ex: &PairExample, mut probs_of: F) -> Result<Vec<FramePrediction>>
where
    F: FnMut(&Model, &[f64], &[f64], u8) -> Vec<f64>,
{
    let (_, enc_map) = model.feature_maps(params, ex)?;
    let mut out = Vec::with_capacity(ex.frame_feats.len());
    for i in 0..ex.frame_feats.len() {
        let x_enc = enc_map.frame_slice(i);
        let t_logit = model.encoder.encode_t(params, &x_enc);
        let t_hat = u8::from(logistic(t_logit) >= 0.5);
        let probs = probs_of(model, params, &x_enc, t_hat);
        out.push(FramePrediction { class: argmax_smallest_tie(&probs), probs });
    }
    Ok(out)
}

/// Full inference path: treatment from `q(t|x)`, latent at the posterior
/// mean, classes from the gated decoder head.
pub fn predict_scores(model: &Model, params: &[f64], ex: &PairExample) -> Result<Vec<FramePrediction>> {
    predict_with(model, params, ex, |model, params, x_enc, t_hat| {
        let post = model.encoder.posterior(params, x_enc, t_hat);
        softmax(&model.decoder.decode_y(params, &post.mu, t_hat))
    })
}

/// Monte-Carlo-averaged inference: class probabilities averaged over
/// `samples` posterior draws instead of the posterior mean.
pub fn predict_scores_mc(
    model: &Model,
    params: &[f64],
    ex: &PairExample,
    samples: usize,
    seed: u64,
) -> Result<Vec<FramePrediction>> {
    if samples == 0 {
        return Err(Error::BadConfig("need at least one inference sample".into()));
    }
    let mut rng = rng::seeded(seed);
    predict_with(model, params, ex, move |model, params, x_enc, t_hat| {
        let post = model.encoder.posterior(params, x_enc, t_hat);
        let mut mean = alloc::vec![0.0; model.cfg.classes];
        let mut noise = alloc::vec![0.0; model.cfg.latent];
        for _ in 0..samples {
            rng::fill_standard_normal(&mut rng, &mut noise);
            let z = sample_z(&post.mu, &post.var, &noise);
            for (m, p) in mean.iter_mut().zip(softmax(&model.decoder.decode_y(params, &z, t_hat))) {
                *m += p;
            }
        }
        for m in mean.iter_mut() {
            *m /= samples as f64;
        }
        mean
    })
}

/// A budgeted summary: the selected frame indices in ascending order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SummarySelection {
    pub pair_id: String,
    pub budget: usize,
    pub indices: Vec<usize>,
}

/// Top-`budget` frames by scalar relevance score, larger is better; ties go
/// to the smaller frame index. Indices are returned sorted ascending.
pub fn select_summary(pair_id: &str, scores: &[f64], budget: usize) -> SummarySelection {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut indices: Vec<usize> = order.into_iter().take(budget).collect();
    indices.sort_unstable();
    SummarySelection { pair_id: String::from(pair_id), budget, indices }
}

/// Top-`budget` frames from model predictions, ranked by class (ordinal),
/// then by the predicted probability of that class, then by frame index.
pub fn select_summary_ranked(
    pair_id: &str,
    preds: &[FramePrediction],
    budget: usize,
) -> SummarySelection {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds[b]
            .class
            .cmp(&preds[a].class)
            .then(preds[b].probs[preds[b].class].total_cmp(&preds[a].probs[preds[a].class]))
            .then(a.cmp(&b))
    });
    let mut indices: Vec<usize> = order.into_iter().take(budget).collect();
    indices.sort_unstable();
    SummarySelection { pair_id: String::from(pair_id), budget, indices }
}

/// Fraction of frames whose predicted class equals the gold class.
pub fn accuracy(preds: &[usize], gold: &[usize]) -> Result<f64> {
    if preds.len() != gold.len() {
        return Err(Error::DimMismatch { what: "accuracy inputs", expected: gold.len(), got: preds.len() });
    }
    if preds.is_empty() {
        return Err(Error::EmptyLabels);
    }
    let hits = preds.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Macro-averaged F1 over classes; classes absent from both the predictions
/// and the gold labels are excluded from the average.
pub fn macro_f1(preds: &[usize], gold: &[usize], classes: usize) -> Result<f64> {
    if preds.len() != gold.len() {
        return Err(Error::DimMismatch { what: "f1 inputs", expected: gold.len(), got: preds.len() });
    }
    if preds.is_empty() {
        return Err(Error::EmptyLabels);
    }
    for &v in preds.iter().chain(gold) {
        if v >= classes {
            return Err(Error::LabelOutOfRange { label: v, classes });
        }
    }
    let mut tp = alloc::vec![0usize; classes];
    let mut fp = alloc::vec![0usize; classes];
    let mut fn_ = alloc::vec![0usize; classes];
    for (&p, &g) in preds.iter().zip(gold) {
        if p == g {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[g] += 1;
        }
    }
    let mut total = 0.0;
    let mut present = 0usize;
    for c in 0..classes {
        if tp[c] + fp[c] + fn_[c] == 0 {
            continue; // class absent everywhere
        }
        present += 1;
        let denom = 2 * tp[c] + fp[c] + fn_[c];
        if denom > 0 {
            total += 2.0 * tp[c] as f64 / denom as f64;
        }
    }
    Ok(total / present.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn select_summary_examples() {
        let s = select_summary("p", &[0.1, 0.9, 0.5, 0.7, 0.2], 3);
        assert_eq!(s.indices, vec![1, 2, 3]);
        let all = select_summary("p", &[0.3, 0.1], 5);
        assert_eq!(all.indices, vec![0, 1]);
        let ties = select_summary("p", &[0.4, 0.4, 0.4], 2);
        assert_eq!(ties.indices, vec![0, 1]);
        assert!(select_summary("p", &[0.4, 0.1], 0).indices.is_empty());
    }

    #[test]
    fn select_summary_is_monotone_invariant() {
        let scores = vec![0.2, -0.7, 1.4, 0.9, 0.0, 0.3];
        let a = select_summary("p", &scores, 3);
        // Strictly monotone transform: 2x + 1 and exp(x).
        let lin: Vec<f64> = scores.iter().map(|&s| 2.0 * s + 1.0).collect();
        let exp: Vec<f64> = scores.iter().map(|&s| num_traits::Float::exp(s)).collect();
        assert_eq!(a.indices, select_summary("p", &lin, 3).indices);
        assert_eq!(a.indices, select_summary("p", &exp, 3).indices);
    }

    #[test]
    fn ranked_selection_orders_by_class_then_prob() {
        let preds = vec![
            FramePrediction { class: 1, probs: vec![0.1, 0.8, 0.1] },
            FramePrediction { class: 2, probs: vec![0.2, 0.2, 0.6] },
            FramePrediction { class: 1, probs: vec![0.05, 0.9, 0.05] },
            FramePrediction { class: 0, probs: vec![0.9, 0.05, 0.05] },
        ];
        let s = select_summary_ranked("p", &preds, 2);
        // Class 2 first, then the higher-confidence class-1 frame (index 2).
        assert_eq!(s.indices, vec![1, 2]);
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[1, 2, 0], &[1, 2, 0]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 1], &[0, 0]).unwrap(), 0.0);
        assert_eq!(accuracy(&[1, 0, 2, 2, 0], &[1, 1, 2, 0, 0]).unwrap(), 0.6);
        assert!(accuracy(&[], &[]).is_err());
        assert!(accuracy(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn macro_f1_hand_computed_case() {
        // Per-class F1 {0: 2/3, 1: 4/5} -> macro 11/15.
        let f1 = macro_f1(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        assert!((f1 - 11.0 / 15.0).abs() < 1e-12);
        assert_eq!(macro_f1(&[0, 1], &[0, 1], 3).unwrap(), 1.0);
        // Disjoint supports.
        assert_eq!(macro_f1(&[0, 0], &[1, 1], 2).unwrap(), 0.0);
        // Absent classes are excluded: class 2 unused.
        let with_absent = macro_f1(&[0, 1, 0], &[0, 1, 1], 3).unwrap();
        let without = macro_f1(&[0, 1, 0], &[0, 1, 1], 2).unwrap();
        assert_eq!(with_absent, without);
    }

    #[test]
    fn metrics_match_brute_force_on_random_cases() {
        use rand::Rng;
        let mut rng = rng::seeded(31);
        for _ in 0..200 {
            let classes = rng.gen_range(2..=4usize);
            let n = rng.gen_range(1..=12usize);
            let preds: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
            let gold: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
            // Brute-force accuracy.
            let mut hits = 0;
            for i in 0..n {
                if preds[i] == gold[i] {
                    hits += 1;
                }
            }
            assert_eq!(accuracy(&preds, &gold).unwrap(), hits as f64 / n as f64);
            // Brute-force macro F1 from the confusion matrix.
            let mut expected = 0.0;
            let mut present = 0;
            for c in 0..classes {
                let tp = (0..n).filter(|&i| preds[i] == c && gold[i] == c).count() as f64;
                let fp = (0..n).filter(|&i| preds[i] == c && gold[i] != c).count() as f64;
                let fnn = (0..n).filter(|&i| preds[i] != c && gold[i] == c).count() as f64;
                if tp + fp + fnn == 0.0 {
                    continue;
                }
                present += 1;
                if 2.0 * tp + fp + fnn > 0.0 {
                    expected += 2.0 * tp / (2.0 * tp + fp + fnn);
                }
            }
            let expected = expected / present.max(1) as f64;
            assert!((macro_f1(&preds, &gold, classes).unwrap() - expected).abs() < 1e-12);
        }
    }
}
