//! Command-line entry point. Parsing and printing live here; the work is in
//! `softaug::commands` so tests can call it directly.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or config error (clap
//! uses 2 for bad arguments on its own).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use softaug::commands;
use softaug::config::{self, RunConfig};

#[derive(Parser)]
#[command(name = "softaug", version, about = "Dialogue seq2seq training with soft embedding augmentation")]
struct Cli {
    /// Config file of `key = value` lines; defaults apply when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set rho=0.2`. Repeatable; applied
    /// after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train neighbor word vectors on a training corpus.
    TrainNeighbors {
        #[arg(long, value_name = "JSONL")]
        corpus: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Train a dialogue model, keeping the best-validation-perplexity epoch.
    Train {
        #[arg(long, value_name = "JSONL")]
        train: PathBuf,
        #[arg(long, value_name = "JSONL")]
        valid: PathBuf,
        /// Neighbor checkpoint; required for every mode except `baseline`.
        #[arg(long, value_name = "CKPT")]
        neighbors: Option<PathBuf>,
        /// Word2vec-format text vectors to initialize the embedding.
        #[arg(long, value_name = "TXT")]
        init_vectors: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Beam-decode a response for every sample of a corpus.
    Generate {
        #[arg(long, value_name = "CKPT")]
        model: PathBuf,
        #[arg(long, value_name = "JSONL")]
        corpus: PathBuf,
        #[arg(long, value_name = "TXT")]
        out: PathBuf,
    },
    /// Score a generated-responses file against a corpus's references.
    Evaluate {
        #[arg(long, value_name = "TXT")]
        responses: PathBuf,
        #[arg(long, value_name = "JSONL")]
        corpus: PathBuf,
        /// Model checkpoint; adds teacher-forced perplexity to the report.
        #[arg(long, value_name = "CKPT")]
        model: Option<PathBuf>,
        /// Also write the JSON report to this file.
        #[arg(long, value_name = "JSON")]
        json_out: Option<PathBuf>,
    },
    /// Show which positions get augmented and with what soft word sets.
    AugmentPreview {
        #[arg(long, value_name = "CKPT")]
        neighbors: PathBuf,
        #[arg(long, value_name = "JSONL")]
        corpus: PathBuf,
        /// How many samples to preview, from the top of the file.
        #[arg(long, default_value_t = 5)]
        samples: usize,
        /// Also write the dump to this file.
        #[arg(long, value_name = "TXT")]
        out: Option<PathBuf>,
    },
    /// Train one model per augmentation ratio and tabulate text metrics.
    SweepRho {
        /// Comma-separated ratios, e.g. `--rhos 0,0.2,0.4`.
        #[arg(long, value_delimiter = ',', required = true, value_name = "RHO")]
        rhos: Vec<f64>,
        #[arg(long, value_name = "JSONL")]
        train: PathBuf,
        #[arg(long, value_name = "JSONL")]
        valid: PathBuf,
        #[arg(long, value_name = "JSONL")]
        test: PathBuf,
        #[arg(long, value_name = "CKPT")]
        neighbors: PathBuf,
        #[arg(long, value_name = "CSV")]
        out: PathBuf,
    },
    /// Train every mode with a shared seed and tabulate all metrics.
    Ablation {
        #[arg(long, value_name = "JSONL")]
        train: PathBuf,
        #[arg(long, value_name = "JSONL")]
        valid: PathBuf,
        #[arg(long, value_name = "JSONL")]
        test: PathBuf,
        #[arg(long, value_name = "CKPT")]
        neighbors: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> softaug::Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => config::parse_config_file(path)?,
        None => RunConfig::default(),
    };
    config::apply_overrides(&mut cfg, &cli.set)?;

    match cli.command {
        Command::TrainNeighbors { corpus, out } => {
            commands::cmd_train_neighbors(&cfg, &corpus, &out)
        }
        Command::Train {
            train,
            valid,
            neighbors,
            init_vectors,
            out,
        } => commands::cmd_train(
            &cfg,
            &train,
            &valid,
            neighbors.as_deref(),
            init_vectors.as_deref(),
            &out,
        ),
        Command::Generate { model, corpus, out } => {
            commands::cmd_generate(&model, &corpus, cfg.beam, cfg.max_len, &out)
        }
        Command::Evaluate {
            responses,
            corpus,
            model,
            json_out,
        } => {
            let report =
                commands::cmd_evaluate(&responses, &corpus, model.as_deref(), json_out.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            eprint!("{}", report.render_table());
            Ok(())
        }
        Command::AugmentPreview {
            neighbors,
            corpus,
            samples,
            out,
        } => {
            let dump =
                commands::cmd_augment_preview(&cfg, &neighbors, &corpus, samples, out.as_deref())?;
            print!("{dump}");
            Ok(())
        }
        Command::SweepRho {
            rhos,
            train,
            valid,
            test,
            neighbors,
            out,
        } => {
            let csv =
                commands::cmd_sweep_rho(&cfg, &rhos, &train, &valid, &test, &neighbors, &out)?;
            print!("{csv}");
            Ok(())
        }
        Command::Ablation {
            train,
            valid,
            test,
            neighbors,
            out,
        } => {
            let csv = commands::cmd_ablation(&cfg, &train, &valid, &test, &neighbors, &out)?;
            print!("{csv}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
