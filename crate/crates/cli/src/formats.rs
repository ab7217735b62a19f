//! On-disk formats: line-delimited dataset records, the split manifest,
//! the vocabulary file, versioned checkpoints with named parameter blocks,
//! the per-epoch metrics history, and the evaluation report.
//!
//! Every format is versioned with `schema_version = 1` and serialized with
//! deterministic field and key order, so identical inputs produce
//! byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use vidsum_core::dataset::{DatasetSplit, FrameAnnotation, QueryVideoPair};
use vidsum_core::features::Vocabulary;
use vidsum_core::loss::LossReport;
use vidsum_core::model::{Model, ModelConfig};
use vidsum_core::train::EpochRecord;
use vidsum_core::types::{Frame, FrameData, Query};

use crate::config::RunConfig;

pub const SCHEMA_VERSION: u32 = 1;

fn f64s_to_b64(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    B64.encode(bytes)
}

fn b64_to_f64s(data: &str) -> Result<Vec<f64>> {
    let bytes = B64.decode(data).context("invalid base64 payload")?;
    if bytes.len() % 8 != 0 {
        bail!("base64 payload length {} is not a multiple of 8", bytes.len());
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

// ---------------------------------------------------------------- dataset

/// How pixel frames are persisted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameStorage {
    /// Base64 raw grids inside the record (desk scale).
    Inline,
    /// Raw little-endian f64 files in a sibling media directory.
    Reference,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct PairRecord {
    schema_version: u32,
    pair_id: String,
    query_tokens: Vec<String>,
    query_treatment: u8,
    frames: FramesRecord,
    annotations: Vec<AnnotationRecord>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum FramesRecord {
    Inline { height: usize, width: usize, data: Vec<String> },
    Features { dim: usize, rows: Vec<Vec<f64>> },
    Ref { dir: String, height: usize, width: usize, count: usize },
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct AnnotationRecord {
    frame_index: usize,
    score_labels: Vec<usize>,
    treatment: u8,
}

fn media_file(dir: &Path, index: usize) -> std::path::PathBuf {
    dir.join(format!("frame_{index:05}.bin"))
}

/// Write a corpus as line-delimited records. With [`FrameStorage::Reference`]
/// the pixel grids go to `<path stem>_media/<pair_id>/frame_*.bin`.
pub fn save_corpus(path: &Path, corpus: &[QueryVideoPair], storage: FrameStorage) -> Result<()> {
    let mut out = String::new();
    for pair in corpus {
        let frames = match (&pair.frames, storage) {
            (FrameData::Pixels(frames), FrameStorage::Inline) => {
                let (h, w) = (frames[0].height(), frames[0].width());
                FramesRecord::Inline {
                    height: h,
                    width: w,
                    data: frames.iter().map(|f| f64s_to_b64(f.pixels())).collect(),
                }
            }
            (FrameData::Pixels(frames), FrameStorage::Reference) => {
                let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
                let rel = format!("{stem}_media/{}", pair.pair_id);
                let dir = path.parent().unwrap_or(Path::new(".")).join(&rel);
                fs::create_dir_all(&dir)
                    .with_context(|| format!("creating media directory {}", dir.display()))?;
                for (i, frame) in frames.iter().enumerate() {
                    let mut bytes = Vec::with_capacity(frame.pixels().len() * 8);
                    for v in frame.pixels() {
                        bytes.extend_from_slice(&v.to_le_bytes());
                    }
                    fs::write(media_file(&dir, i), bytes)?;
                }
                FramesRecord::Ref {
                    dir: rel,
                    height: frames[0].height(),
                    width: frames[0].width(),
                    count: frames.len(),
                }
            }
            (FrameData::Features(rows), _) => {
                FramesRecord::Features { dim: rows.first().map_or(0, Vec::len), rows: rows.clone() }
            }
        };
        let record = PairRecord {
            schema_version: SCHEMA_VERSION,
            pair_id: pair.pair_id.clone(),
            query_tokens: pair.query.tokens().to_vec(),
            query_treatment: pair.query_treatment,
            frames,
            annotations: pair
                .annotations
                .iter()
                .map(|a| AnnotationRecord {
                    frame_index: a.frame_index,
                    score_labels: a.score_labels.clone(),
                    treatment: a.treatment,
                })
                .collect(),
        };
        out.push_str(&serde_json::to_string(&record)?);
        out.push('\n');
    }
    fs::write(path, out).with_context(|| format!("writing dataset {}", path.display()))
}

/// Load a line-delimited corpus, resolving referenced media directories
/// relative to the dataset file.
pub fn load_corpus(path: &Path) -> Result<Vec<QueryVideoPair>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading dataset {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut corpus = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: PairRecord = serde_json::from_str(line)
            .with_context(|| format!("{}:{}: malformed pair record", path.display(), lineno + 1))?;
        if record.schema_version != SCHEMA_VERSION {
            bail!(
                "{}:{}: unsupported schema_version {} (reader supports {})",
                path.display(),
                lineno + 1,
                record.schema_version,
                SCHEMA_VERSION
            );
        }
        let frames = match record.frames {
            FramesRecord::Inline { height, width, data } => {
                let mut frames = Vec::with_capacity(data.len());
                for payload in &data {
                    let values = b64_to_f64s(payload)?;
                    frames.push(
                        Frame::new(height, width, values)
                            .map_err(|e| anyhow!("{}:{}: {e}", path.display(), lineno + 1))?,
                    );
                }
                FrameData::Pixels(frames)
            }
            FramesRecord::Features { dim, rows } => {
                for row in &rows {
                    if row.len() != dim {
                        bail!("{}:{}: feature row width {} != {dim}", path.display(), lineno + 1, row.len());
                    }
                }
                FrameData::Features(rows)
            }
            FramesRecord::Ref { dir, height, width, count } => {
                let dir = base.join(dir);
                let mut frames = Vec::with_capacity(count);
                for i in 0..count {
                    let file = media_file(&dir, i);
                    let bytes = fs::read(&file)
                        .with_context(|| format!("reading referenced frame {}", file.display()))?;
                    if bytes.len() % 8 != 0 {
                        bail!("{}: truncated frame payload", file.display());
                    }
                    let values: Vec<f64> =
                        bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
                    frames.push(
                        Frame::new(height, width, values)
                            .map_err(|e| anyhow!("{}: {e}", file.display()))?,
                    );
                }
                FrameData::Pixels(frames)
            }
        };
        let pair = QueryVideoPair {
            pair_id: record.pair_id,
            query: Query::new(record.query_tokens)
                .map_err(|e| anyhow!("{}:{}: {e}", path.display(), lineno + 1))?,
            frames,
            annotations: record
                .annotations
                .into_iter()
                .map(|a| FrameAnnotation {
                    frame_index: a.frame_index,
                    score_labels: a.score_labels,
                    treatment: a.treatment,
                })
                .collect(),
            query_treatment: record.query_treatment,
        };
        corpus.push(pair);
    }
    Ok(corpus)
}

// ------------------------------------------------------------- meta/manifest

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaDoc {
    pub schema_version: u32,
    pub kind: String,
    pub config: RunConfig,
}

/// Sidecar carrying the effective configuration next to the dataset file.
pub fn save_meta(path: &Path, kind: &str, config: &RunConfig) -> Result<()> {
    let doc =
        MetaDoc { schema_version: SCHEMA_VERSION, kind: kind.into(), config: config.clone() };
    fs::write(path, serde_json::to_string_pretty(&doc)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestDoc {
    pub schema_version: u32,
    pub config: RunConfig,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

pub fn save_manifest(path: &Path, split: &DatasetSplit, config: &RunConfig) -> Result<()> {
    let doc = ManifestDoc {
        schema_version: SCHEMA_VERSION,
        config: config.clone(),
        train: split.train.clone(),
        val: split.val.clone(),
        test: split.test.clone(),
    };
    fs::write(path, serde_json::to_string_pretty(&doc)? + "\n")
        .with_context(|| format!("writing manifest {}", path.display()))
}

pub fn load_manifest(path: &Path) -> Result<DatasetSplit> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading manifest {}", path.display()))?;
    let doc: ManifestDoc = serde_json::from_str(&text)
        .with_context(|| format!("parsing manifest {}", path.display()))?;
    if doc.schema_version != SCHEMA_VERSION {
        bail!("manifest {}: unsupported schema_version {}", path.display(), doc.schema_version);
    }
    Ok(DatasetSplit { train: doc.train, val: doc.val, test: doc.test })
}

// ---------------------------------------------------------------- vocabulary

/// Token-to-index map, one `token<TAB>index` line per token.
pub fn save_vocab(path: &Path, vocab: &Vocabulary) -> Result<()> {
    let mut out = String::new();
    for (i, token) in vocab.tokens().iter().enumerate() {
        out.push_str(&format!("{token}\t{i}\n"));
    }
    fs::write(path, out).with_context(|| format!("writing vocabulary {}", path.display()))
}

pub fn load_vocab(path: &Path) -> Result<Vocabulary> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading vocabulary {}", path.display()))?;
    let mut tokens = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (token, index) = line
            .split_once('\t')
            .ok_or_else(|| anyhow!("{}:{}: expected token<TAB>index", path.display(), lineno + 1))?;
        let index: usize = index
            .trim()
            .parse()
            .with_context(|| format!("{}:{}: bad index", path.display(), lineno + 1))?;
        if index != tokens.len() {
            bail!("{}:{}: indices must be dense and in order", path.display(), lineno + 1);
        }
        tokens.push(token.to_string());
    }
    Ok(Vocabulary::from_tokens(tokens))
}

// ---------------------------------------------------------------- checkpoint

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointDoc {
    pub schema_version: u32,
    pub config: RunConfig,
    pub vocab: Vec<String>,
    /// Named parameter blocks grouped into sections (fusion, attention,
    /// encoder, decoder), keyed and ordered deterministically.
    pub sections: BTreeMap<String, Vec<BlockDoc>>,
    pub diverged_at: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockDoc {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: String,
}

fn section_of(name: &str) -> String {
    name.split('.').next().unwrap_or("misc").to_string()
}

pub fn save_checkpoint(
    path: &Path,
    model: &Model,
    params: &[f64],
    vocab: &Vocabulary,
    config: &RunConfig,
    diverged_at: Option<usize>,
) -> Result<()> {
    let mut sections: BTreeMap<String, Vec<BlockDoc>> = BTreeMap::new();
    for (name, block) in &model.layout.blocks {
        sections.entry(section_of(name)).or_default().push(BlockDoc {
            name: name.clone(),
            rows: block.rows,
            cols: block.cols,
            data: f64s_to_b64(block.slice(params)),
        });
    }
    let doc = CheckpointDoc {
        schema_version: SCHEMA_VERSION,
        config: config.clone(),
        vocab: vocab.tokens().to_vec(),
        sections,
        diverged_at,
    };
    fs::write(path, serde_json::to_string(&doc)? + "\n")
        .with_context(|| format!("writing checkpoint {}", path.display()))
}

/// Rebuild the model, parameters, and vocabulary from a checkpoint.
pub fn load_checkpoint(path: &Path) -> Result<(Model, Vec<f64>, Vocabulary, RunConfig)> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading checkpoint {}", path.display()))?;
    let doc: CheckpointDoc = serde_json::from_str(&text)
        .with_context(|| format!("parsing checkpoint {}", path.display()))?;
    if doc.schema_version != SCHEMA_VERSION {
        bail!("checkpoint {}: unsupported schema_version {}", path.display(), doc.schema_version);
    }
    let vocab = Vocabulary::from_tokens(doc.vocab.clone());
    let model_cfg: ModelConfig = doc
        .config
        .model_config_for_query_dim(vocab.bow_dim())
        .map_err(|e| anyhow!("checkpoint {}: {e}", path.display()))?;
    let model = Model::new(model_cfg).map_err(|e| anyhow!("checkpoint {}: {e}", path.display()))?;
    let mut params = vec![0.0; model.layout.total];
    let mut filled = 0usize;
    for blocks in doc.sections.values() {
        for b in blocks {
            let block = model
                .layout
                .block(&b.name)
                .ok_or_else(|| anyhow!("checkpoint {}: unknown block {}", path.display(), b.name))?;
            if (block.rows, block.cols) != (b.rows, b.cols) {
                bail!(
                    "checkpoint {}: block {} has shape {}x{}, expected {}x{}",
                    path.display(),
                    b.name,
                    b.rows,
                    b.cols,
                    block.rows,
                    block.cols
                );
            }
            let values = b64_to_f64s(&b.data)?;
            if values.len() != block.len() {
                bail!("checkpoint {}: block {} has {} values", path.display(), b.name, values.len());
            }
            params[block.offset..block.offset + values.len()].copy_from_slice(&values);
            filled += values.len();
        }
    }
    if filled != model.layout.total {
        bail!(
            "checkpoint {}: {} of {} parameters filled",
            path.display(),
            filled,
            model.layout.total
        );
    }
    Ok((model, params, vocab, doc.config))
}

// ------------------------------------------------------------------- history

#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HistoryLine {
    Header { schema_version: u32, config: RunConfig, diverged_at: Option<usize> },
    Epoch {
        epoch: usize,
        aux_t: f64,
        aux_y: f64,
        recon_x: f64,
        recon_t: f64,
        recon_y: f64,
        log_prior_term: f64,
        entropy_term: f64,
        l_auxiliary: f64,
        l_causal: f64,
        elbo: f64,
        train_accuracy: Option<f64>,
        val_accuracy: Option<f64>,
    },
}

fn epoch_line(rec: &EpochRecord) -> HistoryLine {
    let r: &LossReport = &rec.report;
    HistoryLine::Epoch {
        epoch: rec.epoch,
        aux_t: r.aux_t,
        aux_y: r.aux_y,
        recon_x: r.recon_x,
        recon_t: r.recon_t,
        recon_y: r.recon_y,
        log_prior_term: r.log_prior_term,
        entropy_term: r.entropy_term,
        l_auxiliary: r.l_auxiliary,
        l_causal: r.l_causal,
        elbo: r.elbo,
        train_accuracy: rec.train_accuracy,
        val_accuracy: rec.val_accuracy,
    }
}

pub fn save_history(
    path: &Path,
    history: &[EpochRecord],
    config: &RunConfig,
    diverged_at: Option<usize>,
) -> Result<()> {
    let mut out = serde_json::to_string(&HistoryLine::Header {
        schema_version: SCHEMA_VERSION,
        config: config.clone(),
        diverged_at,
    })?;
    out.push('\n');
    for rec in history {
        out.push_str(&serde_json::to_string(&epoch_line(rec))?);
        out.push('\n');
    }
    fs::write(path, out).with_context(|| format!("writing history {}", path.display()))
}

// --------------------------------------------------------------- eval report

#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReportLine {
    Header { schema_version: u32, config: RunConfig, split: String },
    Pair { pair_id: String, accuracy: f64, f1: f64, selected_indices: Vec<usize> },
    Aggregate { pairs: usize, mean_accuracy: f64, mean_f1: f64 },
}

pub fn save_report(path: &Path, lines: &[ReportLine]) -> Result<()> {
    let mut out = String::new();
    for line in lines {
        out.push_str(&serde_json::to_string(line)?);
        out.push('\n');
    }
    fs::write(path, out).with_context(|| format!("writing report {}", path.display()))
}

pub fn load_report(path: &Path) -> Result<Vec<ReportLine>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading report {}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).with_context(|| format!("parsing report {}", path.display())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;
    use vidsum_core::dataset::{synth_corpus, SynthConfig};

    fn small_corpus() -> Vec<QueryVideoPair> {
        synth_corpus(&SynthConfig {
            n_pairs: 3,
            min_frames: 4,
            max_frames: 6,
            target_frames: 10,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn corpus_round_trips_bit_exactly_inline() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let corpus = small_corpus();
        save_corpus(&path, &corpus, FrameStorage::Inline).unwrap();
        let back = load_corpus(&path).unwrap();
        assert_eq!(corpus, back);
        // Byte-identical on re-save.
        let bytes1 = fs::read(&path).unwrap();
        save_corpus(&path, &back, FrameStorage::Inline).unwrap();
        assert_eq!(bytes1, fs::read(&path).unwrap());
    }

    #[test]
    fn corpus_round_trips_via_media_reference() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let corpus = small_corpus();
        save_corpus(&path, &corpus, FrameStorage::Reference).unwrap();
        let back = load_corpus(&path).unwrap();
        assert_eq!(corpus, back);
    }

    #[test]
    fn featurized_corpus_round_trips() {
        let mut corpus = small_corpus();
        for pair in &mut corpus {
            let n = pair.frames.len();
            pair.frames =
                FrameData::Features((0..n).map(|i| vec![i as f64 * 0.5, -1.25]).collect());
        }
        let dir = tempdir().unwrap();
        let path = dir.path().join("f.jsonl");
        save_corpus(&path, &corpus, FrameStorage::Inline).unwrap();
        assert_eq!(load_corpus(&path).unwrap(), corpus);
    }

    #[test]
    fn missing_treatment_field_is_a_schema_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let line = r#"{"schema_version":1,"pair_id":"p","query_tokens":["a"],"query_treatment":0,"frames":{"kind":"features","dim":1,"rows":[[0.1]]},"annotations":[{"frame_index":0,"score_labels":[1]}]}"#;
        fs::write(&path, format!("{line}\n")).unwrap();
        let err = load_corpus(&path).unwrap_err();
        assert!(format!("{err:#}").contains("treatment"), "{err:#}");
    }

    #[test]
    fn wrong_schema_version_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("v2.jsonl");
        let line = r#"{"schema_version":2,"pair_id":"p","query_tokens":[],"query_treatment":0,"frames":{"kind":"features","dim":1,"rows":[[0.0]]},"annotations":[{"frame_index":0,"score_labels":[0],"treatment":0}]}"#;
        fs::write(&path, format!("{line}\n")).unwrap();
        let err = load_corpus(&path).unwrap_err();
        assert!(err.to_string().contains("schema_version 2"));
    }

    #[test]
    fn vocab_file_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("vocab.tsv");
        let vocab = Vocabulary::from_tokens(vec!["alpha".into(), "beta".into()]);
        save_vocab(&path, &vocab).unwrap();
        let back = load_vocab(&path).unwrap();
        assert_eq!(vocab, back);
        fs::write(&path, "alpha\t1\n").unwrap();
        assert!(load_vocab(&path).is_err());
    }

    #[test]
    fn checkpoint_round_trips_parameters() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let run = RunConfig::default();
        let vocab = Vocabulary::from_tokens(vec!["a".into(), "b".into()]);
        let model =
            Model::new(run.model_config_for_query_dim(vocab.bow_dim()).unwrap()).unwrap();
        let params = model.init_params(7);
        save_checkpoint(&path, &model, &params, &vocab, &run, None).unwrap();
        let (model2, params2, vocab2, _) = load_checkpoint(&path).unwrap();
        assert_eq!(params, params2);
        assert_eq!(vocab, vocab2);
        assert_eq!(model.layout.total, model2.layout.total);
        // Sections are grouped as expected.
        let text = fs::read_to_string(&path).unwrap();
        let doc: CheckpointDoc = serde_json::from_str(&text).unwrap();
        let keys: Vec<&String> = doc.sections.keys().collect();
        assert_eq!(keys, ["attention", "decoder", "encoder", "fusion"]);
    }
}
