//! Treatment-labeled corpus construction: length normalization by frame
//! repetition, annotation merging, seeded treatment assignment over pairs and
//! frames, train/val/test splitting, and a planted synthetic corpus for desk
//! scale work.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use log::warn;
#[allow(unused_imports)] // required by the no_std build; std test builds shadow it
use num_traits::Float;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::treatments;
use crate::types::{Frame, FrameData, Query};

/// Every video is normalized to this many frame positions.
pub const TARGET_FRAMES: usize = 199;

/// Per-frame annotation: raw annotator score labels plus the treatment bit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameAnnotation {
    pub frame_index: usize,
    pub score_labels: Vec<usize>,
    pub treatment: u8,
}

/// One (video, query) sample with aligned per-frame annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryVideoPair {
    pub pair_id: String,
    pub query: Query,
    pub frames: FrameData,
    pub annotations: Vec<FrameAnnotation>,
    pub query_treatment: u8,
}

impl QueryVideoPair {
    /// Check the structural invariants: aligned lengths, binary treatment
    /// bits, non-empty label lists, labels within `[0, classes)`.
    pub fn validate(&self, classes: usize) -> Result<()> {
        let fail = |reason| Error::BadPair { pair_id: self.pair_id.clone(), reason };
        if self.frames.len() != self.annotations.len() {
            return Err(fail("frame and annotation counts differ"));
        }
        if self.query_treatment > 1 {
            return Err(fail("query_treatment must be 0 or 1"));
        }
        for (i, ann) in self.annotations.iter().enumerate() {
            if ann.frame_index != i {
                return Err(fail("annotations not aligned to frame indices"));
            }
            if ann.score_labels.is_empty() {
                return Err(fail("empty score label list"));
            }
            if ann.treatment > 1 {
                return Err(fail("treatment must be 0 or 1"));
            }
            for &l in &ann.score_labels {
                if l >= classes {
                    return Err(Error::LabelOutOfRange { label: l, classes });
                }
            }
        }
        Ok(())
    }

    /// Majority-merged gold label per frame.
    pub fn gold_labels(&self) -> Result<Vec<usize>> {
        self.annotations.iter().map(|a| merge_annotations(&a.score_labels)).collect()
    }

    pub fn treatments(&self) -> Vec<u8> {
        self.annotations.iter().map(|a| a.treatment).collect()
    }
}

/// Disjoint train/val/test membership by pair id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// How many times each original frame is repeated when padding `len` frames
/// to `target`: the first `target % len` originals get one extra copy.
pub fn repeat_plan(len: usize, target: usize) -> Result<Vec<usize>> {
    if len == 0 || len > target {
        return Err(Error::PadLength { len, target });
    }
    let base = target / len;
    let extra = target % len;
    Ok((0..len).map(|i| if i < extra { base + 1 } else { base }).collect())
}

/// Length-normalize a video by repeating frames in place, preserving order.
pub fn pad_video(frames: &[Frame], target: usize) -> Result<Vec<Frame>> {
    let plan = repeat_plan(frames.len(), target)?;
    let mut out = Vec::with_capacity(target);
    for (frame, &reps) in frames.iter().zip(&plan) {
        for _ in 0..reps {
            out.push(frame.clone());
        }
    }
    debug_assert_eq!(out.len(), target);
    Ok(out)
}

/// Collapse annotator labels into one gold label: majority vote, ties broken
/// toward the smaller label value.
pub fn merge_annotations(score_labels: &[usize]) -> Result<usize> {
    if score_labels.is_empty() {
        return Err(Error::EmptyLabels);
    }
    let max = *score_labels.iter().max().unwrap();
    let mut counts = alloc::vec![0usize; max + 1];
    for &l in score_labels {
        counts[l] += 1;
    }
    let mut best = 0;
    for (label, &count) in counts.iter().enumerate() {
        if count > counts[best] {
            best = label;
        }
    }
    Ok(best)
}

/// Which perturbation the treated frames receive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VisualTreatment {
    SaltPepper { density: f64 },
    Blur { kernel_size: usize },
}

impl Default for VisualTreatment {
    fn default() -> Self {
        VisualTreatment::SaltPepper { density: 0.1 }
    }
}

/// Parameters of the treatment-assignment pass.
#[derive(Debug, Clone, PartialEq)]
pub struct CvsdConfig {
    /// Fraction of pairs that receive treatments (rounded count).
    pub pair_fraction: f64,
    /// Fraction of each treated pair's frames treated (floored count).
    pub frame_fraction: f64,
    pub visual: VisualTreatment,
    /// Words removed from each treated pair's query (clamped to its length).
    pub textual_k: usize,
    pub seed: u64,
}

impl Default for CvsdConfig {
    fn default() -> Self {
        CvsdConfig {
            pair_fraction: 0.5,
            frame_fraction: 0.3,
            visual: VisualTreatment::default(),
            textual_k: treatments::DEFAULT_DROP_WORDS,
            seed: 0,
        }
    }
}

/// Apply seeded visual/textual treatments to a corpus: `round(pair_fraction
/// * N)` pairs are selected; within each, exactly `floor(frame_fraction * F)`
/// frames get `treatment = 1` and the visual perturbation, and the query gets
/// `query_treatment = 1` with `textual_k` words removed. Everything else is
/// passed through bit-identically with treatment 0.
pub fn build_cvsd(corpus: &[QueryVideoPair], cfg: &CvsdConfig) -> Result<Vec<QueryVideoPair>> {
    for frac in [cfg.pair_fraction, cfg.frame_fraction] {
        if !(0.0..=1.0).contains(&frac) {
            return Err(Error::FractionOutOfRange(frac));
        }
    }
    if let VisualTreatment::SaltPepper { density } = cfg.visual {
        if !(0.0..=1.0).contains(&density) {
            return Err(Error::DensityOutOfRange(density));
        }
    }
    if let VisualTreatment::Blur { kernel_size } = cfg.visual {
        if kernel_size == 0 || kernel_size % 2 == 0 {
            return Err(Error::KernelNotOdd(kernel_size));
        }
    }

    let mut master = rng::seeded(cfg.seed);
    let n_selected = (cfg.pair_fraction * corpus.len() as f64).round() as usize;
    let selected = rng::sample_indices(&mut master, corpus.len(), n_selected);

    let mut out = Vec::with_capacity(corpus.len());
    for (i, pair) in corpus.iter().enumerate() {
        if selected.binary_search(&i).is_err() {
            out.push(pair.clone());
            continue;
        }
        let frames = match &pair.frames {
            FrameData::Pixels(f) => f,
            FrameData::Features(_) => return Err(Error::PreFeaturized),
        };
        let n_frames = frames.len();
        let n_treated = (cfg.frame_fraction * n_frames as f64).floor() as usize;
        let mut pair_rng = rng::seeded(rng::derive_seed(&mut master));
        let treated = rng::sample_indices(&mut pair_rng, n_frames, n_treated);

        let mut new_frames = Vec::with_capacity(n_frames);
        let mut new_annotations = pair.annotations.clone();
        for (f_idx, frame) in frames.iter().enumerate() {
            if treated.binary_search(&f_idx).is_ok() {
                let perturbed = match cfg.visual {
                    VisualTreatment::SaltPepper { density } => {
                        treatments::salt_pepper(frame, density, pair_rng.gen())?
                    }
                    VisualTreatment::Blur { kernel_size } => treatments::blur(frame, kernel_size)?,
                };
                new_frames.push(perturbed);
                new_annotations[f_idx].treatment = 1;
            } else {
                new_frames.push(frame.clone());
            }
        }

        let k = if cfg.textual_k > pair.query.len() {
            warn!(
                "pair {}: clamping textual_k from {} to query length {}",
                pair.pair_id,
                cfg.textual_k,
                pair.query.len()
            );
            pair.query.len()
        } else {
            cfg.textual_k
        };
        let query = treatments::drop_words(&pair.query, k, pair_rng.gen())?;

        out.push(QueryVideoPair {
            pair_id: pair.pair_id.clone(),
            query,
            frames: FrameData::Pixels(new_frames),
            annotations: new_annotations,
            query_treatment: 1,
        });
    }
    Ok(out)
}

/// Seeded disjoint split. Validation and test sizes are floored; the
/// remainder goes to train.
pub fn split_corpus(
    corpus: &[QueryVideoPair],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<DatasetSplit> {
    let (r_train, r_val, r_test) = ratios;
    let sum = r_train + r_val + r_test;
    if r_train < 0.0 || r_val < 0.0 || r_test < 0.0 || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::BadSplitRatios);
    }
    let n = corpus.len();
    let n_val = (r_val * n as f64).floor() as usize;
    let n_test = (r_test * n as f64).floor() as usize;
    let mut rng = rng::seeded(seed);
    let order = rng::shuffled_indices(&mut rng, n);
    let id = |i: usize| corpus[i].pair_id.clone();
    let train = order[..n - n_val - n_test].iter().copied().map(id).collect();
    let val = order[n - n_val - n_test..n - n_test].iter().copied().map(id).collect();
    let test = order[n - n_test..].iter().copied().map(id).collect();
    Ok(DatasetSplit { train, val, test })
}

/// Configuration of the planted synthetic corpus.
///
/// Each vocabulary token is assigned a distinct prototype color; every frame
/// shows one token's prototype plus pixel noise, and the frame's relevance
/// class is a deterministic function of how strongly its token relates to
/// the query (same token > same topic > unrelated), corrupted per annotator
/// with a small flip probability. The task is therefore solvable from
/// (pixels, query) alone, and the planted rule doubles as a label oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_pairs: usize,
    pub vocab_size: usize,
    pub n_score_classes: usize,
    pub n_annotators: usize,
    /// Probability that one annotator shifts the true class by +/- 1.
    pub annotator_flip: f64,
    pub frame_height: usize,
    pub frame_width: usize,
    /// Pixel noise amplitude around the prototype color.
    pub pixel_noise: f64,
    /// Pre-padding video length range (inclusive).
    pub min_frames: usize,
    pub max_frames: usize,
    /// Query length range (inclusive).
    pub min_query: usize,
    pub max_query: usize,
    /// Tokens per topic; same-topic tokens are mid-relevance to each other.
    pub topic_size: usize,
    pub target_frames: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_pairs: 48,
            vocab_size: 20,
            n_score_classes: 3,
            n_annotators: 3,
            annotator_flip: 0.1,
            frame_height: 4,
            frame_width: 4,
            pixel_noise: 0.05,
            min_frames: 24,
            max_frames: 60,
            min_query: 2,
            max_query: 4,
            topic_size: 4,
            target_frames: TARGET_FRAMES,
            seed: 0,
        }
    }
}

/// Prototype color of a vocabulary token, structured so the planted rule is
/// visible in pixel space: the red channel encodes the token's topic, the
/// green channel its position within the topic, and the blue channel a
/// seeded per-token offset. Distinct tokens always differ by at least
/// `0.7 / topic_size` in red or green, far above the pixel noise.
pub fn token_color(token: usize, topic_size: usize, vocab_size: usize, seed: u64) -> [f64; 3] {
    let mut rng = rng::seeded(seed ^ 0x746f_6b63_6f6c_6f72);
    let topics = vocab_size.div_ceil(topic_size).max(1);
    let topic = token / topic_size;
    let member = token % topic_size;
    let blue: f64 = {
        // One seeded draw per token index, independent of the others.
        let mut b = 0.0;
        for _ in 0..=token {
            b = rng.gen::<f64>();
        }
        0.2 + 0.6 * b
    };
    [
        0.15 + 0.7 * topic as f64 / (topics.max(2) - 1) as f64,
        0.15 + 0.7 * member as f64 / (topic_size.max(2) - 1) as f64,
        blue,
    ]
}

/// Affinity level of a frame token against the query tokens: 2 for query
/// membership, 1 for sharing a topic with a query token, 0 otherwise.
pub fn affinity_level(query_tokens: &[usize], frame_token: usize, topic_size: usize) -> usize {
    if query_tokens.contains(&frame_token) {
        2
    } else if query_tokens.iter().any(|&q| q / topic_size == frame_token / topic_size) {
        1
    } else {
        0
    }
}

/// Planted relevance class of a frame token given the query tokens:
/// membership in the query scores highest, sharing a topic with a query
/// token scores mid, anything else lowest.
pub fn affinity_class(
    query_tokens: &[usize],
    frame_token: usize,
    topic_size: usize,
    classes: usize,
) -> usize {
    let level = affinity_level(query_tokens, frame_token, topic_size) as f64;
    (level / 2.0 * (classes - 1) as f64).round() as usize
}

/// Nearest-prototype token of a frame, from its mean color. Together with
/// [`affinity_class`] this recovers the planted label without touching the
/// generator's internal state.
pub fn nearest_token(frame: &Frame, vocab_size: usize, topic_size: usize, seed: u64) -> usize {
    let mean = frame.channel_means();
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for token in 0..vocab_size {
        let proto = token_color(token, topic_size, vocab_size, seed);
        let d: f64 = (0..3).map(|k| (mean[k] - proto[k]) * (mean[k] - proto[k])).sum();
        if d < best_d {
            best_d = d;
            best = token;
        }
    }
    best
}

/// Generate a planted synthetic corpus. Deterministic given the config.
pub fn synth_corpus(cfg: &SynthConfig) -> Result<Vec<QueryVideoPair>> {
    if cfg.vocab_size == 0
        || cfg.n_score_classes < 2
        || cfg.n_annotators == 0
        || cfg.min_frames == 0
        || cfg.min_frames > cfg.max_frames
        || cfg.max_frames > cfg.target_frames
        || cfg.min_query == 0
        || cfg.min_query > cfg.max_query
        || cfg.max_query > crate::types::MAX_QUERY_TOKENS
        || cfg.topic_size == 0
    {
        return Err(Error::BadConfig(format!("invalid synthetic corpus config: {cfg:?}")));
    }
    if !(0.0..=1.0).contains(&cfg.annotator_flip) {
        return Err(Error::FractionOutOfRange(cfg.annotator_flip));
    }

    let mut master = rng::seeded(cfg.seed);
    let mut corpus = Vec::with_capacity(cfg.n_pairs);
    for p in 0..cfg.n_pairs {
        let mut rng = rng::seeded(rng::derive_seed(&mut master));

        let q_len = rng.gen_range(cfg.min_query..=cfg.max_query.min(cfg.vocab_size));
        let query_tokens = rng::sample_indices(&mut rng, cfg.vocab_size, q_len);
        let query = Query::new(
            query_tokens.iter().map(|&t| format!("w{t:02}")).collect(),
        )?;

        // Pick the planted affinity level first, then a token of that level,
        // so the class distribution stays balanced regardless of how many
        // topics the query happens to cover.
        let n_frames = rng.gen_range(cfg.min_frames..=cfg.max_frames);
        let mut by_level: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for token in 0..cfg.vocab_size {
            by_level[affinity_level(&query_tokens, token, cfg.topic_size)].push(token);
        }
        let mut frame_tokens = Vec::with_capacity(n_frames);
        for _ in 0..n_frames {
            let u: f64 = rng.gen();
            let want = if u < 0.4 { 2 } else if u < 0.7 { 1 } else { 0 };
            // Fall back to nearby levels when the query leaves one empty.
            let level = [want, 2 - want, 1]
                .into_iter()
                .find(|&l| !by_level[l].is_empty())
                .unwrap_or(2);
            let pool = &by_level[level];
            frame_tokens.push(pool[rng.gen_range(0..pool.len())]);
        }

        // Render originals and draw annotator labels once per original frame.
        let mut originals = Vec::with_capacity(n_frames);
        let mut labels: Vec<Vec<usize>> = Vec::with_capacity(n_frames);
        for &token in &frame_tokens {
            let proto = token_color(token, cfg.topic_size, cfg.vocab_size, cfg.seed);
            let (h, w) = (cfg.frame_height, cfg.frame_width);
            let mut px = Vec::with_capacity(3 * h * w);
            for c in 0..3 {
                for _ in 0..h * w {
                    let noise = (rng.gen::<f64>() * 2.0 - 1.0) * cfg.pixel_noise;
                    px.push((proto[c] + noise).clamp(0.0, 1.0));
                }
            }
            originals.push(Frame::new(h, w, px)?);

            let truth =
                affinity_class(&query_tokens, token, cfg.topic_size, cfg.n_score_classes);
            let mut per_frame = Vec::with_capacity(cfg.n_annotators);
            for _ in 0..cfg.n_annotators {
                let label = if rng.gen::<f64>() < cfg.annotator_flip {
                    let up = rng.gen::<bool>();
                    if up {
                        (truth + 1).min(cfg.n_score_classes - 1)
                    } else {
                        truth.saturating_sub(1)
                    }
                } else {
                    truth
                };
                per_frame.push(label);
            }
            labels.push(per_frame);
        }

        // Pad frames and repeat annotations in lockstep.
        let plan = repeat_plan(n_frames, cfg.target_frames)?;
        let frames = pad_video(&originals, cfg.target_frames)?;
        let mut annotations = Vec::with_capacity(cfg.target_frames);
        for (orig_idx, &reps) in plan.iter().enumerate() {
            for _ in 0..reps {
                annotations.push(FrameAnnotation {
                    frame_index: annotations.len(),
                    score_labels: labels[orig_idx].clone(),
                    treatment: 0,
                });
            }
        }

        let pair = QueryVideoPair {
            pair_id: format!("synth-{p:04}"),
            query,
            frames: FrameData::Pixels(frames),
            annotations,
            query_treatment: 0,
        };
        pair.validate(cfg.n_score_classes)?;
        corpus.push(pair);
    }
    Ok(corpus)
}
