use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use vidsum_cli::commands::{cmd_build, cmd_eval, cmd_summarize, cmd_synth, cmd_train, OutPaths};
use vidsum_cli::config::RunConfig;

/// Treatment-aware multi-modal video summarization pipeline.
#[derive(Parser)]
#[command(name = "vidsum", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration file (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the configured output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(dir) = &self.out_dir {
            cfg.out_dir = dir.display().to_string();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the planted synthetic corpus.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Apply visual/textual treatments and write the split manifest.
    Build {
        #[command(flatten)]
        common: Common,
        /// Source corpus (defaults to <out_dir>/dataset.jsonl).
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Train a model on the manifest's train split.
    Train {
        #[command(flatten)]
        common: Common,
        /// Treated corpus (defaults to <out_dir>/cvsd.jsonl).
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Split manifest (defaults to <out_dir>/manifest.json).
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Vocabulary file (defaults to <out_dir>/vocab.tsv).
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Override the configured epoch count.
        #[arg(long)]
        epochs: Option<usize>,
        /// Override the attention switch.
        #[arg(long)]
        attention: Option<bool>,
    },
    /// Score a split against a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint (defaults to <out_dir>/checkpoint.json).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Which split to score: train | val | test | all.
        #[arg(long)]
        split: Option<String>,
        /// Override the summary budget.
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Select a budgeted summary for one pair and dump its score columns.
    Summarize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Pair to summarize.
        #[arg(long)]
        pair_id: String,
        /// Number of frames in the summary.
        #[arg(long)]
        budget: Option<usize>,
    },
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Synth { common } => {
            let cfg = common.resolve()?;
            let out = cmd_synth(&cfg)?;
            println!("dataset: {}", out.dataset.display());
            println!("vocab: {}", out.vocab.display());
        }
        Command::Build { common, dataset } => {
            let cfg = common.resolve()?;
            let paths = OutPaths::new(std::path::Path::new(&cfg.out_dir));
            let dataset = dataset.unwrap_or(paths.dataset);
            let out = cmd_build(&cfg, &dataset)?;
            println!("cvsd: {}", out.cvsd.display());
            println!("manifest: {}", out.manifest.display());
        }
        Command::Train { common, dataset, manifest, vocab, epochs, attention } => {
            let mut cfg = common.resolve()?;
            if let Some(epochs) = epochs {
                cfg.train.epochs = epochs;
            }
            if let Some(attention) = attention {
                cfg.model.attention = attention;
            }
            cfg.validate()?;
            let paths = OutPaths::new(std::path::Path::new(&cfg.out_dir));
            let out = cmd_train(
                &cfg,
                &dataset.unwrap_or(paths.cvsd),
                &manifest.unwrap_or(paths.manifest),
                &vocab.unwrap_or(paths.vocab),
            )?;
            println!("checkpoint: {}", out.checkpoint.display());
            println!("history: {}", out.history.display());
        }
        Command::Eval { common, checkpoint, dataset, manifest, split, budget } => {
            let mut cfg = common.resolve()?;
            if let Some(split) = split {
                cfg.eval.split = split;
            }
            if let Some(budget) = budget {
                cfg.eval.budget = budget;
            }
            cfg.validate()?;
            let paths = OutPaths::new(std::path::Path::new(&cfg.out_dir));
            let out = cmd_eval(
                &cfg,
                &checkpoint.unwrap_or(paths.checkpoint),
                &dataset.unwrap_or(paths.cvsd),
                &manifest.unwrap_or(paths.manifest),
            )?;
            println!("report: {}", out.report.display());
        }
        Command::Summarize { common, checkpoint, dataset, pair_id, budget } => {
            let cfg = common.resolve()?;
            let paths = OutPaths::new(std::path::Path::new(&cfg.out_dir));
            let (selection, scores) = cmd_summarize(
                &cfg,
                &checkpoint.unwrap_or(paths.checkpoint),
                &dataset.unwrap_or(paths.cvsd),
                &pair_id,
                budget.unwrap_or(cfg.eval.budget),
            )?;
            println!(
                "{}",
                serde_json::json!({
                    "pair_id": selection.pair_id,
                    "budget": selection.budget,
                    "selected_indices": selection.indices,
                    "scores": scores.display().to_string(),
                })
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
