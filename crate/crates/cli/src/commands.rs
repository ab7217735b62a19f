//! The five pipeline commands. Each is a plain function over paths and the
//! run configuration, so tests call them exactly as the binary does. Every
//! command is idempotent given identical inputs and seeds.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use log::{info, warn};
use vidsum_core::dataset::{build_cvsd, split_corpus, synth_corpus, QueryVideoPair};
use vidsum_core::eval::{self, FramePrediction};
use vidsum_core::features::Vocabulary;
use vidsum_core::model::{prepare_pair, Model, PairExample};
use vidsum_core::train::train;

use crate::config::RunConfig;
use crate::formats::{
    load_checkpoint, load_corpus, load_manifest, load_vocab, save_checkpoint, save_corpus,
    save_history, save_manifest, save_meta, save_report, save_vocab, FrameStorage, ReportLine,
};

pub struct OutPaths {
    pub dataset: PathBuf,
    pub dataset_meta: PathBuf,
    pub vocab: PathBuf,
    pub cvsd: PathBuf,
    pub manifest: PathBuf,
    pub checkpoint: PathBuf,
    pub history: PathBuf,
    pub report: PathBuf,
}

impl OutPaths {
    pub fn new(out_dir: &Path) -> Self {
        OutPaths {
            dataset: out_dir.join("dataset.jsonl"),
            dataset_meta: out_dir.join("dataset.meta.json"),
            vocab: out_dir.join("vocab.tsv"),
            cvsd: out_dir.join("cvsd.jsonl"),
            manifest: out_dir.join("manifest.json"),
            checkpoint: out_dir.join("checkpoint.json"),
            history: out_dir.join("history.jsonl"),
            report: out_dir.join("eval.jsonl"),
        }
    }
}

fn ensure_out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = PathBuf::from(&cfg.out_dir);
    fs::create_dir_all(&dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir)
}

/// Generate the planted synthetic corpus plus its vocabulary file.
pub fn cmd_synth(cfg: &RunConfig) -> Result<OutPaths> {
    let out = OutPaths::new(&ensure_out_dir(cfg)?);
    let corpus = synth_corpus(&cfg.synth_config())?;
    let vocab = Vocabulary::from_corpus(&corpus);
    save_corpus(&out.dataset, &corpus, FrameStorage::Inline)?;
    save_vocab(&out.vocab, &vocab)?;
    save_meta(&out.dataset_meta, "synth", cfg)?;
    info!("synth: wrote {} pairs to {}", corpus.len(), out.dataset.display());
    Ok(out)
}

/// Apply the treatment-assignment pass and write the split manifest.
pub fn cmd_build(cfg: &RunConfig, dataset: &Path) -> Result<OutPaths> {
    let out = OutPaths::new(&ensure_out_dir(cfg)?);
    let corpus = load_corpus(dataset)?;
    let built = build_cvsd(&corpus, &cfg.cvsd_config())?;
    let split = split_corpus(&built, (cfg.split.train, cfg.split.val, cfg.split.test), cfg.seed)?;
    save_corpus(&out.cvsd, &built, FrameStorage::Inline)?;
    save_manifest(&out.manifest, &split, cfg)?;
    let treated = built.iter().filter(|p| p.query_treatment == 1).count();
    info!(
        "build: {} pairs ({treated} treated), split {}/{}/{}",
        built.len(),
        split.train.len(),
        split.val.len(),
        split.test.len()
    );
    Ok(out)
}

fn index_corpus(corpus: &[QueryVideoPair]) -> std::collections::BTreeMap<&str, &QueryVideoPair> {
    corpus.iter().map(|p| (p.pair_id.as_str(), p)).collect()
}

fn prepare_split(
    cfg: &RunConfig,
    corpus: &[QueryVideoPair],
    vocab: &Vocabulary,
    ids: &[String],
) -> Result<Vec<PairExample>> {
    let by_id = index_corpus(corpus);
    let feat = cfg.featurizer_config();
    let model_cfg = cfg.model_config_for_query_dim(vocab.bow_dim())?;
    ids.iter()
        .map(|id| {
            let pair = by_id
                .get(id.as_str())
                .ok_or_else(|| anyhow!("manifest references unknown pair {id:?}"))?;
            prepare_pair(pair, vocab, &feat, model_cfg.frames, model_cfg.classes)
                .map_err(|e| anyhow!("pair {id}: {e}"))
        })
        .collect()
}

/// Train on the manifest's train split, validating on its val split.
pub fn cmd_train(cfg: &RunConfig, dataset: &Path, manifest: &Path, vocab: &Path) -> Result<OutPaths> {
    let out = OutPaths::new(&ensure_out_dir(cfg)?);
    let corpus = load_corpus(dataset)?;
    let vocab = load_vocab(vocab)?;
    let split = load_manifest(manifest)?;
    let train_set = prepare_split(cfg, &corpus, &vocab, &split.train)?;
    let val_set = prepare_split(cfg, &corpus, &vocab, &split.val)?;
    let model = Model::new(cfg.model_config_for_query_dim(vocab.bow_dim())?)?;
    let result = train(&model, &train_set, &val_set, &cfg.train_config())?;
    if let Some(epoch) = result.diverged_at {
        warn!("train: objective went non-finite at epoch {epoch}; keeping last finite state");
    }
    save_checkpoint(&out.checkpoint, &model, &result.params, &vocab, cfg, result.diverged_at)?;
    save_history(&out.history, &result.history, cfg, result.diverged_at)?;
    if let Some(last) = result.history.last() {
        info!(
            "train: {} epochs, objective {:.4}, train acc {:?}, val acc {:?}",
            result.history.len(),
            last.report.l_causal,
            last.train_accuracy,
            last.val_accuracy
        );
    }
    Ok(out)
}

fn predictions_for(
    cfg: &RunConfig,
    model: &Model,
    params: &[f64],
    ex: &PairExample,
) -> Result<Vec<FramePrediction>> {
    Ok(if cfg.eval.mc_samples > 0 {
        eval::predict_scores_mc(model, params, ex, cfg.eval.mc_samples, cfg.seed)?
    } else {
        eval::predict_scores(model, params, ex)?
    })
}

/// Score a split of the corpus against a checkpoint: per-pair accuracy,
/// macro F1, and the budgeted summary selection, plus an aggregate line.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, dataset: &Path, manifest: &Path) -> Result<OutPaths> {
    let out = OutPaths::new(&ensure_out_dir(cfg)?);
    let (model, params, vocab, _ckpt_cfg) = load_checkpoint(checkpoint)?;
    let corpus = load_corpus(dataset)?;
    let split = load_manifest(manifest)?;
    let ids: Vec<String> = match cfg.eval.split.as_str() {
        "train" => split.train.clone(),
        "val" => split.val.clone(),
        "test" => split.test.clone(),
        "all" => {
            let mut all = split.train.clone();
            all.extend(split.val.iter().cloned());
            all.extend(split.test.iter().cloned());
            all
        }
        other => bail!("unknown eval split {other:?}"),
    };
    let examples = prepare_split(cfg, &corpus, &vocab, &ids)?;

    let mut lines = vec![ReportLine::Header {
        schema_version: crate::formats::SCHEMA_VERSION,
        config: cfg.clone(),
        split: cfg.eval.split.clone(),
    }];
    let mut sum_acc = 0.0;
    let mut sum_f1 = 0.0;
    for ex in &examples {
        let preds = predictions_for(cfg, &model, &params, ex)?;
        let classes: Vec<usize> = preds.iter().map(|p| p.class).collect();
        let accuracy = eval::accuracy(&classes, &ex.labels)?;
        let f1 = eval::macro_f1(&classes, &ex.labels, model.cfg.classes)?;
        let selection = eval::select_summary_ranked(&ex.pair_id, &preds, cfg.eval.budget);
        sum_acc += accuracy;
        sum_f1 += f1;
        lines.push(ReportLine::Pair {
            pair_id: ex.pair_id.clone(),
            accuracy,
            f1,
            selected_indices: selection.indices,
        });
    }
    let n = examples.len();
    lines.push(ReportLine::Aggregate {
        pairs: n,
        mean_accuracy: sum_acc / n.max(1) as f64,
        mean_f1: sum_f1 / n.max(1) as f64,
    });
    save_report(&out.report, &lines)?;
    info!("eval: {} pairs, report at {}", n, out.report.display());
    Ok(out)
}

/// Summarize one pair: print the selection as JSON and write per-frame
/// score columns (frame_index, class, probability) for plotting.
pub fn cmd_summarize(
    cfg: &RunConfig,
    checkpoint: &Path,
    dataset: &Path,
    pair_id: &str,
    budget: usize,
) -> Result<(eval::SummarySelection, PathBuf)> {
    let out_dir = ensure_out_dir(cfg)?;
    let (model, params, vocab, _) = load_checkpoint(checkpoint)?;
    let corpus = load_corpus(dataset)?;
    let pair = corpus
        .iter()
        .find(|p| p.pair_id == pair_id)
        .ok_or_else(|| anyhow!("pair id {pair_id:?} not found in {}", dataset.display()))?;
    let feat = cfg.featurizer_config();
    let ex = prepare_pair(pair, &vocab, &feat, model.cfg.frames, model.cfg.classes)?;
    let preds = predictions_for(cfg, &model, &params, &ex)?;
    let selection = eval::select_summary_ranked(pair_id, &preds, budget);

    let scores_path = out_dir.join(format!("scores_{pair_id}.tsv"));
    let mut columns = String::from("frame_index\tclass\tprobability\n");
    for (i, p) in preds.iter().enumerate() {
        columns.push_str(&format!("{i}\t{}\t{}\n", p.class, p.probs[p.class]));
    }
    fs::write(&scores_path, columns)
        .with_context(|| format!("writing scores {}", scores_path.display()))?;
    Ok((selection, scores_path))
}
