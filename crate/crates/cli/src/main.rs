//! `callscope` command-line entry point.
//!
//! Exit codes: 0 success, 1 validation or configuration error (including
//! bad usage), 2 filesystem, network or audio-container error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::Preset;

/// Environment variable naming the download cache directory.
pub const CACHE_ENV: &str = "CALLSCOPE_CACHE";

#[derive(Parser, Debug)]
#[command(name = "callscope", version, about = "Time-frequency detection of nocturnal bird flight calls")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Seed for the model and the synthetic corpus (overrides the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 0 = one per core.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// JSON configuration layered over the defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dotted override, e.g. `--set model.train.steps=200`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Model preset the defaults start from.
    #[arg(long, global = true, value_enum, default_value = "small")]
    pub preset: Preset,
    /// Where config.json and summary.json are written.
    #[arg(long, global = true)]
    pub run_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Download, verify and unpack the annotated corpus archive.
    Fetch {
        /// Defaults to $CALLSCOPE_CACHE, then ~/.cache/callscope.
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
    /// Index a corpus directory into a manifest.
    Ingest {
        #[arg(long)]
        root: PathBuf,
        /// `nbm-eval`, a vocabulary JSON, or a text file of latin names.
        #[arg(long)]
        vocab: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "nbm-orig")]
        origin: commands::OriginArg,
    },
    /// Print corpus statistics and the evaluation scope.
    Stats {
        /// Manifest file, or a corpus directory holding one.
        #[arg(long, visible_alias = "manifest")]
        data: PathBuf,
        #[arg(long)]
        vocab: Option<String>,
    },
    /// Generate the synthetic corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Replace train/ and test/ in a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Train a detector on the TRAIN split.
    Train {
        #[arg(long, visible_alias = "manifest")]
        data: PathBuf,
        #[arg(long)]
        vocab: Option<String>,
        /// Output directory for the checkpoint and the loss log.
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint holding optimizer state.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Train only on species in the evaluation scope.
        #[arg(long)]
        scoped: bool,
    },
    /// Run the detector over audio files.
    Detect {
        #[arg(long)]
        weights: PathBuf,
        /// An audio file or a directory searched recursively.
        #[arg(long = "in")]
        input: PathBuf,
        /// `.csv` or `.jsonl`.
        #[arg(long)]
        out: PathBuf,
        /// Only recordings of this split of the directory's manifest.
        #[arg(long, value_enum)]
        split: Option<commands::SplitArg>,
        /// Overrides inference.score_threshold.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Score detections against ground-truth boxes.
    EvalDet {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long, visible_alias = "manifest")]
        data: PathBuf,
        #[arg(long)]
        vocab: Option<String>,
        #[arg(long, value_enum, default_value = "test")]
        split: commands::SplitArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score detections cast to fixed-length multi-label windows.
    EvalMl {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long, visible_alias = "manifest")]
        data: PathBuf,
        #[arg(long)]
        vocab: Option<String>,
        #[arg(long, value_enum, default_value = "test")]
        split: commands::SplitArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep the frequency encoding of test calls and write posteriors.
    Probe {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, visible_alias = "manifest")]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge evaluation and probe outputs and render tables and plots.
    Report {
        /// report.json / probe.json files or directories holding them.
        #[arg(long = "in", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
