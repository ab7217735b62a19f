//! Multi-modal featurization: per-frame visual features and bag-of-words
//! query vectors, the inputs to the fusion layer.
//!
//! The desk-scale visual backend is a fixed, seeded random projection of
//! channel-normalized, downsampled pixels. It is deterministic and shares
//! the interface a pretrained-CNN backend would use, so corpora that arrive
//! pre-featurized pass straight through.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
#[allow(unused_imports)] // required by the no_std build; std test builds shadow it
use num_traits::Float;
use rand::Rng;

use crate::dataset::QueryVideoPair;
use crate::error::{Error, Result};
use crate::rng;
use crate::types::{Frame, FrameData, Query};

/// Per-channel normalization statistics applied to pixel inputs.
pub const CHANNEL_MEAN: [f64; 3] = [0.4280, 0.4106, 0.3589];
pub const CHANNEL_STD: [f64; 3] = [0.2737, 0.2631, 0.2601];

/// Configuration of the desk-scale visual featurizer.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturizerConfig {
    /// Width of the per-frame visual feature vector.
    pub visual_dim: usize,
    /// Pixel grids are pooled to `grid x grid` cells per channel first.
    pub grid: usize,
    /// Seed of the fixed projection matrix.
    pub seed: u64,
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for FeaturizerConfig {
    fn default() -> Self {
        FeaturizerConfig {
            visual_dim: 12,
            grid: 4,
            seed: 0,
            mean: CHANNEL_MEAN,
            std: CHANNEL_STD,
        }
    }
}

/// Normalize and block-mean-pool a frame to a `3 * grid^2` vector.
pub fn downsample_normalized(frame: &Frame, cfg: &FeaturizerConfig) -> Vec<f64> {
    let (h, w, g) = (frame.height(), frame.width(), cfg.grid);
    let mut out = Vec::with_capacity(3 * g * g);
    for c in 0..3 {
        for gy in 0..g {
            for gx in 0..g {
                let y0 = (gy * h / g).min(h - 1);
                let y1 = ((gy + 1) * h / g).max(y0 + 1).min(h);
                let x0 = (gx * w / g).min(w - 1);
                let x1 = ((gx + 1) * w / g).max(x0 + 1).min(w);
                let mut sum = 0.0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        sum += (frame.get(c, y, x) - cfg.mean[c]) / cfg.std[c];
                    }
                }
                out.push(sum / ((y1 - y0) * (x1 - x0)) as f64);
            }
        }
    }
    out
}

/// The fixed projection matrix (`visual_dim x 3*grid^2`), regenerated
/// deterministically from the featurizer seed.
fn projection(cfg: &FeaturizerConfig) -> Vec<f64> {
    let in_dim = 3 * cfg.grid * cfg.grid;
    let a = (3.0 / in_dim as f64).sqrt();
    let mut rng = rng::seeded(cfg.seed ^ 0x6665_6174_7572_6573);
    (0..cfg.visual_dim * in_dim).map(|_| rng.gen_range(-a..a)).collect()
}

/// Featurize a video into `expected_frames` rows of width `visual_dim`.
/// Pixel frames go through the desk-scale backend; precomputed features are
/// validated and passed through.
pub fn featurize_frames(
    frames: &FrameData,
    cfg: &FeaturizerConfig,
    expected_frames: usize,
) -> Result<Vec<Vec<f64>>> {
    if frames.len() != expected_frames {
        return Err(Error::FrameCountMismatch { expected: expected_frames, got: frames.len() });
    }
    match frames {
        FrameData::Features(rows) => {
            for row in rows {
                if row.len() != cfg.visual_dim {
                    return Err(Error::DimMismatch {
                        what: "precomputed frame feature",
                        expected: cfg.visual_dim,
                        got: row.len(),
                    });
                }
            }
            Ok(rows.clone())
        }
        FrameData::Pixels(frames) => {
            let proj = projection(cfg);
            let in_dim = 3 * cfg.grid * cfg.grid;
            let mut out = Vec::with_capacity(frames.len());
            for frame in frames {
                let pooled = downsample_normalized(frame, cfg);
                let mut row = Vec::with_capacity(cfg.visual_dim);
                for o in 0..cfg.visual_dim {
                    let mut acc = 0.0;
                    for (p, v) in proj[o * in_dim..(o + 1) * in_dim].iter().zip(&pooled) {
                        acc += p * v;
                    }
                    row.push(acc);
                }
                out.push(row);
            }
            Ok(out)
        }
    }
}

/// Token-to-index map, fixed when the dataset is built. Unknown tokens map
/// to a reserved trailing bucket.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocabulary {
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, index }
    }

    /// Distinct query tokens of a corpus, in sorted order.
    pub fn from_corpus(corpus: &[QueryVideoPair]) -> Self {
        let mut set: Vec<String> = corpus
            .iter()
            .flat_map(|p| p.query.tokens().iter().cloned())
            .collect();
        set.sort();
        set.dedup();
        Self::from_tokens(set)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Width of the bag-of-words vector (vocabulary plus the OOV bucket).
    pub fn bow_dim(&self) -> usize {
        self.tokens.len() + 1
    }

    /// Token-count vector; out-of-vocabulary tokens land in the last bucket.
    pub fn bow(&self, query: &Query) -> Vec<f64> {
        let mut v = alloc::vec![0.0; self.bow_dim()];
        for t in query.tokens() {
            match self.get(t) {
                Some(i) => v[i] += 1.0,
                None => v[self.tokens.len()] += 1.0,
            }
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn vocab(words: &[&str]) -> Vocabulary {
        Vocabulary::from_tokens(words.iter().map(|w| w.to_string()).collect())
    }

    #[test]
    fn normalized_constant_mean_channel_is_zero() {
        // A frame whose red channel sits exactly at the red mean pools to 0.
        let mut px = vec![0.0; 3 * 4 * 4];
        for p in px.iter_mut().take(16) {
            *p = CHANNEL_MEAN[0];
        }
        for p in px.iter_mut().skip(16) {
            *p = 0.5;
        }
        let f = Frame::new(4, 4, px).unwrap();
        let pooled = downsample_normalized(&f, &FeaturizerConfig::default());
        assert!(pooled[..16].iter().all(|&v| v == 0.0), "red cells: {:?}", &pooled[..16]);
        assert!(pooled[16..].iter().all(|&v| v != 0.0));
    }

    #[test]
    fn featurize_is_deterministic_and_checks_count() {
        let frames: Vec<Frame> = (0..5)
            .map(|i| Frame::constant(4, 4, 0.1 + 0.15 * i as f64).unwrap())
            .collect();
        let data = FrameData::Pixels(frames);
        let cfg = FeaturizerConfig::default();
        let a = featurize_frames(&data, &cfg, 5).unwrap();
        let b = featurize_frames(&data, &cfg, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        assert_eq!(a[0].len(), cfg.visual_dim);
        // Identical frames get identical rows.
        let twice = FrameData::Pixels(vec![
            Frame::constant(4, 4, 0.3).unwrap(),
            Frame::constant(4, 4, 0.3).unwrap(),
        ]);
        let rows = featurize_frames(&twice, &cfg, 2).unwrap();
        assert_eq!(rows[0], rows[1]);
        assert!(matches!(
            featurize_frames(&data, &cfg, 7),
            Err(Error::FrameCountMismatch { expected: 7, got: 5 })
        ));
    }

    #[test]
    fn precomputed_features_pass_through() {
        let rows = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        let cfg = FeaturizerConfig { visual_dim: 2, ..FeaturizerConfig::default() };
        let out = featurize_frames(&FrameData::Features(rows.clone()), &cfg, 2).unwrap();
        assert_eq!(out, rows);
        let bad = FrameData::Features(vec![vec![1.0; 3]; 2]);
        assert!(matches!(featurize_frames(&bad, &cfg, 2), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn bow_counts_and_oov_bucket() {
        let v = vocab(&["a", "b"]);
        let q = Query::new(vec!["a".to_string(), "a".to_string(), "b".to_string()]).unwrap();
        assert_eq!(v.bow(&q), vec![2.0, 1.0, 0.0]);
        let empty = Query::new(vec![]).unwrap();
        assert_eq!(v.bow(&empty), vec![0.0, 0.0, 0.0]);
        let oov = Query::new(vec!["zzz".to_string()]).unwrap();
        assert_eq!(v.bow(&oov), vec![0.0, 0.0, 1.0]);
    }
}
