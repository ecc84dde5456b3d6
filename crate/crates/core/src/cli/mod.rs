//! Command-line front end.
//!
//! Every subcommand resolves its flags against an optional TOML config file,
//! writes a `run-<subcommand>-<run_id>.json` describing the resolved inputs,
//! and appends line-delimited result records to `results.jsonl` in its output
//! directory.

mod commands;
pub mod records;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::Error;
use crate::masking::MaskStrategy;
use crate::probing::ProbeKind;

pub use records::{read_records, FileConfig, ResultRecord, RunConfig, RESULTS_FILE};

/// Exit status per error class.
pub mod exit {
    pub const OK: i32 = 0;
    pub const OTHER: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const CONTRACT: i32 = 3;
    pub const IO: i32 = 4;
    pub const FORMAT: i32 = 5;
    pub const DIMENSION: i32 = 6;
    pub const NUMERIC: i32 = 7;
    pub const CHECK_FAILED: i32 = 8;
    pub const CONFIG: i32 = 9;
}

#[derive(Debug, Parser)]
#[command(name = "lvmae", version, about = "Masked-embedding autoencoding over long-video segment embeddings")]
pub struct Cli {
    /// Worker threads for the data-parallel kernels (1 forces single-thread mode).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus and its caption bank.
    GenSynth(GenSynthArgs),
    /// Convert line-delimited JSON embeddings into a corpus.
    Ingest(IngestArgs),
    /// Pre-train a model with masked-embedding reconstruction.
    Pretrain(PretrainArgs),
    /// Train a probe on frozen latents.
    Probe(ProbeArgs),
    /// Retrieve captions for reconstructed masked slots.
    Retrieve(RetrieveArgs),
    /// Compare analytic and finite-difference gradients on a tiny model.
    Gradcheck(GradcheckArgs),
    /// Run ablation grids over mask ratio, encoder depth or segment length.
    Sweep(SweepArgs),
    /// Aggregate result records.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file whose `[synth]` section overrides the defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub prototypes: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub videos: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub split: Option<u64>,
    /// Emit this many order-sensitive twin pairs instead of free walks.
    #[arg(long)]
    pub order_pairs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// One JSON object per line: `video_id`, `embeddings` and optional
    /// `labels`, `caption_ids`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Scale every embedding to unit length.
    #[arg(long)]
    pub normalize: bool,
    #[arg(long, default_value = "unknown")]
    pub encoder_id: String,
    #[arg(long, default_value_t = 5.0)]
    pub segment_len: f64,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Checkpoint path; logs and records go next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub mask_strategy: Option<MaskStrategy>,
    #[arg(long)]
    pub mask_ratio: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// TOML file with optional `[model]` and `[pretrain]` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Label name in the corpus manifest.
    #[arg(long)]
    pub task: String,
    #[arg(long)]
    pub head: ProbeKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; defaults to the checkpoint's directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// TOML file whose `[probe]` section overrides the head defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Caption TSV; embeddings are read from the sibling `.lvme` file.
    #[arg(long)]
    pub bank: PathBuf,
    #[arg(long, default_value_t = 0.4)]
    pub ratio: f64,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, default_value = "random")]
    pub mask_strategy: MaskStrategy,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Unit-normalize the bank rows.
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    /// Coordinates probed per parameter tensor (0 probes all).
    #[arg(long, default_value_t = 0)]
    pub samples: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Ratio grid as `start:stop:step` (inclusive) or a comma list.
    #[arg(long)]
    pub mask_ratio: Option<String>,
    /// Comma-separated encoder depths.
    #[arg(long, value_delimiter = ',')]
    pub depths: Vec<usize>,
    /// Comma-separated segment lengths in seconds; each must be a multiple
    /// of the corpus segment length.
    #[arg(long, value_delimiter = ',')]
    pub segment_lens: Vec<f64>,
    #[arg(long)]
    pub mask_strategy: Option<MaskStrategy>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Result files or directories containing `results.jsonl`.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Write the table here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A check that ran to completion but did not meet its tolerance.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct CheckFailed(pub String);

/// A config file that does not parse or contradicts the command line.
#[derive(Debug, thiserror::Error)]
#[error("config: {0}")]
pub struct ConfigError(pub String);

pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<CheckFailed>().is_some() {
        return exit::CHECK_FAILED;
    }
    if err.chain().any(|c| c.is::<ConfigError>()) {
        return exit::CONFIG;
    }
    let Some(e) = err.chain().find_map(|c| c.downcast_ref::<Error>()) else {
        return if err.chain().any(|c| c.is::<std::io::Error>()) {
            exit::IO
        } else {
            exit::OTHER
        };
    };
    match e {
        Error::Contract(_) => exit::CONTRACT,
        Error::Io { .. } => exit::IO,
        Error::BadMagic { .. } | Error::Version { .. } | Error::Truncated { .. } | Error::Parse { .. } => {
            exit::FORMAT
        }
        Error::Shape { .. } | Error::DimMismatch { .. } => exit::DIMENSION,
        Error::NonFinite { .. } | Error::DegenerateRow { .. } | Error::Diverged { .. } => exit::NUMERIC,
    }
}

/// Run a parsed command line.
pub fn run(cli: Cli, argv: Vec<String>) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        set_threads(n)?;
    }
    match cli.command {
        Command::GenSynth(a) => commands::gen_synth(a, argv),
        Command::Ingest(a) => commands::ingest(a, argv),
        Command::Pretrain(a) => commands::pretrain(a, argv),
        Command::Probe(a) => commands::probe(a, argv),
        Command::Retrieve(a) => commands::retrieve(a, argv),
        Command::Gradcheck(a) => commands::gradcheck(a, argv),
        Command::Sweep(a) => commands::sweep(a, argv),
        Command::Report(a) => commands::report(a),
    }
}

/// Parse `argv` (including the program name), run, and map the outcome to
/// an exit status.
pub fn run_argv<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::USAGE } else { exit::OK };
        }
    };
    match run(cli, argv) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {}", render_chain(&e));
            exit_code(&e)
        }
    }
}

/// Join the error chain, skipping causes already spelled out by their parent.
fn render_chain(err: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut prev = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !prev.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
        prev = msg;
    }
    out
}

#[cfg(feature = "parallel")]
fn set_threads(n: usize) -> anyhow::Result<()> {
    if n == 0 {
        return Err(Error::Contract("--threads must be positive".into()).into());
    }
    if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
        log::warn!("thread pool already initialised; --threads {n} ignored");
    }
    Ok(())
}

#[cfg(not(feature = "parallel"))]
fn set_threads(n: usize) -> anyhow::Result<()> {
    if n != 1 {
        log::warn!("built without the parallel feature; --threads {n} ignored");
    }
    Ok(())
}
