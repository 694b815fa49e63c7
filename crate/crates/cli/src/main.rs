//! Command-line front end for the tileability toolkit. Every subcommand is a
//! thin adapter over the library: it resolves a config (defaults, then an
//! optional config file, then individual flags), logs the resolved values
//! and seed, runs the corresponding library call, and writes its outputs
//! into a run directory together with a `manifest.json` listing them.
//!
//! Failures exit nonzero with a single machine-readable JSON object on
//! stderr; the exit code distinguishes usage errors (2, from argument
//! parsing), missing input files (3), invalid configuration (4), runtime
//! failures (5), and images that exist but cannot be decoded (6).

mod commands;
mod run;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "textile",
    version,
    about = "Texture tileability: scoring, training, and applications"
)]
struct Cli {
    /// Log filter, e.g. "info" or "textile=debug" (RUST_LOG overrides).
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score images with a trained checkpoint and write a CSV/JSON report.
    Score(commands::ScoreArgs),
    /// Train a network on a labeled manifest.
    Train(commands::TrainArgs),
    /// Evaluate a checkpoint on one split of a manifest.
    Eval(commands::EvalArgs),
    /// Synthesize a tileable texture in the style of an exemplar.
    Synth(commands::SynthArgs),
    /// Re-optimize a border band so the image tiles, keeping the interior.
    Outpaint(commands::OutpaintArgs),
    /// Find the rotation that best aligns a texture for tiling.
    Align(commands::AlignArgs),
    /// Find the repeat size whose 2x2 tiling scores highest.
    Repeat(commands::RepeatArgs),
    /// Pixel-attribution map for a trained checkpoint on one image.
    Saliency(commands::SaliencyArgs),
    /// Score directories of images with several scorers and compare them.
    Bench(commands::BenchArgs),
    /// Generate the synthetic labeled corpus.
    GenCorpus(commands::GenCorpusArgs),
}

/// Failure modes with distinct exit codes (usage errors exit 2 via the
/// argument parser before any of these can occur).
#[derive(Debug)]
pub enum CliError {
    /// A required input file or directory does not exist.
    Missing { what: &'static str, path: PathBuf },
    /// An image file exists but cannot be decoded.
    Unreadable { path: PathBuf, message: String },
    /// Configuration that fails validation before any work starts.
    Config(String),
    /// The run itself failed: training, optimization, checkpoint integrity.
    Run(String),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Missing { .. } => "missing-input",
            CliError::Unreadable { .. } => "unreadable-image",
            CliError::Config(_) => "invalid-config",
            CliError::Run(_) => "run-failed",
        }
    }

    fn exit_code(&self) -> i32 {
        match self {
            CliError::Missing { .. } => 3,
            CliError::Config(_) => 4,
            CliError::Run(_) => 5,
            CliError::Unreadable { .. } => 6,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Missing { what, path } => write!(f, "{what} not found: {}", path.display()),
            CliError::Unreadable { path, message } => {
                write!(f, "cannot read image {}: {message}", path.display())
            }
            CliError::Config(msg) => write!(f, "invalid configuration: {msg}"),
            CliError::Run(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Run(format!("i/o: {err}"))
    }
}

fn main() {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log)
        .parse_default_env()
        .format_timestamp(None)
        .init();

    let result = match cli.command {
        Command::Score(args) => commands::score(args),
        Command::Train(args) => commands::train(args),
        Command::Eval(args) => commands::eval(args),
        Command::Synth(args) => commands::synth(args),
        Command::Outpaint(args) => commands::outpaint(args),
        Command::Align(args) => commands::align(args),
        Command::Repeat(args) => commands::repeat(args),
        Command::Saliency(args) => commands::saliency(args),
        Command::Bench(args) => commands::bench(args),
        Command::GenCorpus(args) => commands::gen_corpus(args),
    };

    if let Err(err) = result {
        let body = serde_json::json!({
            "error": err.kind(),
            "message": err.to_string(),
        });
        eprintln!("{body}");
        std::process::exit(err.exit_code());
    }
}
