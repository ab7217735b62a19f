//! The run configuration: one TOML file drives the whole pipeline. Unknown
//! keys are rejected; command-line flags override individual keys; the
//! effective configuration is echoed into every artifact.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use vidsum_core::dataset::{CvsdConfig, SynthConfig, VisualTreatment, TARGET_FRAMES};
use vidsum_core::features::FeaturizerConfig;
use vidsum_core::loss::KlMode;
use vidsum_core::model::ModelConfig;
use vidsum_core::train::TrainConfig;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: String,
    pub synth: SynthSection,
    pub build: BuildSection,
    pub split: SplitSection,
    pub featurizer: FeaturizerSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: "runs/out".into(),
            synth: SynthSection::default(),
            build: BuildSection::default(),
            split: SplitSection::default(),
            featurizer: FeaturizerSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub n_pairs: usize,
    pub vocab_size: usize,
    pub annotators: usize,
    pub annotator_flip: f64,
    pub frame_height: usize,
    pub frame_width: usize,
    pub pixel_noise: f64,
    pub min_frames: usize,
    pub max_frames: usize,
    pub min_query: usize,
    pub max_query: usize,
    pub topic_size: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        let d = SynthConfig::default();
        SynthSection {
            n_pairs: d.n_pairs,
            vocab_size: d.vocab_size,
            annotators: d.n_annotators,
            annotator_flip: d.annotator_flip,
            frame_height: d.frame_height,
            frame_width: d.frame_width,
            pixel_noise: d.pixel_noise,
            min_frames: d.min_frames,
            max_frames: d.max_frames,
            min_query: d.min_query,
            max_query: d.max_query,
            topic_size: d.topic_size,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct BuildSection {
    pub pair_fraction: f64,
    pub frame_fraction: f64,
    /// "salt_pepper" or "blur".
    pub visual: String,
    pub density: f64,
    pub kernel_size: usize,
    pub textual_k: usize,
}

impl Default for BuildSection {
    fn default() -> Self {
        BuildSection {
            pair_fraction: 0.5,
            frame_fraction: 0.3,
            visual: "salt_pepper".into(),
            density: 0.1,
            kernel_size: vidsum_core::treatments::DEFAULT_BLUR_KERNEL,
            textual_k: vidsum_core::treatments::DEFAULT_DROP_WORDS,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection { train: 0.6, val: 0.2, test: 0.2 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct FeaturizerSection {
    /// "projection" (desk-scale pixel backend) or "precomputed".
    pub backend: String,
    pub visual_dim: usize,
    pub grid: usize,
}

impl Default for FeaturizerSection {
    fn default() -> Self {
        let d = FeaturizerConfig::default();
        FeaturizerSection { backend: "projection".into(), visual_dim: d.visual_dim, grid: d.grid }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub channels: usize,
    pub feat_dim: usize,
    pub upsample: usize,
    pub hidden: usize,
    pub rep_dim: usize,
    pub latent: usize,
    pub classes: usize,
    pub attention: bool,
    pub attn_proj: usize,
    pub n_mc: usize,
    /// "closed_form" or "sampled".
    pub kl_mode: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            channels: 4,
            feat_dim: 8,
            upsample: 2,
            hidden: 32,
            rep_dim: 16,
            latent: 8,
            classes: 3,
            attention: true,
            attn_proj: 1,
            n_mc: 1,
            kl_mode: "closed_form".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub eval_each_epoch: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            epochs: d.epochs,
            learning_rate: d.learning_rate,
            beta1: d.beta1,
            beta2: d.beta2,
            epsilon: d.epsilon,
            batch_size: d.batch_size,
            eval_each_epoch: d.eval_each_epoch,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Summary budget (frames per summary).
    pub budget: usize,
    /// 0 uses posterior-mean inference; > 0 averages that many samples.
    pub mc_samples: usize,
    /// Which split to evaluate: "train", "val", "test", or "all".
    pub split: String,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { budget: 20, mc_samples: 0, split: "test".into() }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text)
            .with_context(|| format!("parsing config file {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match self.build.visual.as_str() {
            "salt_pepper" | "blur" => {}
            other => bail!("config: unknown visual treatment {other:?}"),
        }
        match self.model.kl_mode.as_str() {
            "closed_form" | "sampled" => {}
            other => bail!("config: unknown kl_mode {other:?}"),
        }
        match self.featurizer.backend.as_str() {
            "projection" | "precomputed" => {}
            other => bail!("config: unknown featurizer backend {other:?}"),
        }
        match self.eval.split.as_str() {
            "train" | "val" | "test" | "all" => {}
            other => bail!("config: unknown eval split {other:?}"),
        }
        self.model_config()?.validate().map_err(|e| anyhow::anyhow!("config: {e}"))?;
        Ok(())
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            n_pairs: self.synth.n_pairs,
            vocab_size: self.synth.vocab_size,
            n_score_classes: self.model.classes,
            n_annotators: self.synth.annotators,
            annotator_flip: self.synth.annotator_flip,
            frame_height: self.synth.frame_height,
            frame_width: self.synth.frame_width,
            pixel_noise: self.synth.pixel_noise,
            min_frames: self.synth.min_frames,
            max_frames: self.synth.max_frames,
            min_query: self.synth.min_query,
            max_query: self.synth.max_query,
            topic_size: self.synth.topic_size,
            target_frames: TARGET_FRAMES,
            seed: self.seed,
        }
    }

    pub fn cvsd_config(&self) -> CvsdConfig {
        CvsdConfig {
            pair_fraction: self.build.pair_fraction,
            frame_fraction: self.build.frame_fraction,
            visual: if self.build.visual == "blur" {
                VisualTreatment::Blur { kernel_size: self.build.kernel_size }
            } else {
                VisualTreatment::SaltPepper { density: self.build.density }
            },
            textual_k: self.build.textual_k,
            seed: self.seed,
        }
    }

    pub fn featurizer_config(&self) -> FeaturizerConfig {
        FeaturizerConfig {
            visual_dim: self.featurizer.visual_dim,
            grid: self.featurizer.grid,
            seed: self.seed,
            ..FeaturizerConfig::default()
        }
    }

    /// Model configuration; `query_dim` is resolved against the vocabulary
    /// at train time, so here it is a placeholder satisfying validation.
    pub fn model_config(&self) -> Result<ModelConfig> {
        self.model_config_for_query_dim(1)
    }

    pub fn model_config_for_query_dim(&self, query_dim: usize) -> Result<ModelConfig> {
        Ok(ModelConfig {
            visual_dim: self.featurizer.visual_dim,
            query_dim,
            channels: self.model.channels,
            feat_dim: self.model.feat_dim,
            upsample: self.model.upsample,
            frames: TARGET_FRAMES,
            hidden: self.model.hidden,
            rep_dim: self.model.rep_dim,
            latent: self.model.latent,
            classes: self.model.classes,
            attention: self.model.attention,
            attn_proj: self.model.attn_proj,
            n_mc: self.model.n_mc,
            kl_mode: if self.model.kl_mode == "sampled" {
                KlMode::Sampled
            } else {
                KlMode::ClosedForm
            },
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            learning_rate: self.train.learning_rate,
            beta1: self.train.beta1,
            beta2: self.train.beta2,
            epsilon: self.train.epsilon,
            batch_size: self.train.batch_size,
            seed: self.seed,
            eval_each_epoch: self.train.eval_each_epoch,
        }
    }
}
