//! `hirsute`: facial-hair bias measurement and threshold calibration.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 calibration error.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::Flags;

#[derive(Parser, Debug)]
#[command(name = "hirsute", version, about = "Facial-hair bias measurement for face verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a manifest (and embeddings), derive ratios from masks, summarize.
    Ingest(#[command(flatten)] Flags),
    /// Facial-hair IoU of predicted masks per image and per ratio bucket,
    /// and agreement between two annotators.
    MaskEval(MaskEvalArgs),
    /// Score every genuine and impostor pair into a score cache.
    Score(ScoreArgs),
    /// Global and per-group thresholds on the full dataset.
    Calibrate(CalibrateArgs),
    /// Repeated validation/test evaluation of global versus adaptive thresholds.
    Evaluate(#[command(flatten)] Flags),
    /// Write a synthetic dataset with a tunable facial-hair confound.
    Synth(SynthArgs),
    /// Print the table from an `evaluate` output directory.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct MaskEvalArgs {
    #[command(flatten)]
    flags: Flags,
    /// Ground-truth mask directory (file names match --masks).
    #[arg(long)]
    gt: PathBuf,
    /// Second annotator's masks, compared against --gt.
    #[arg(long)]
    gt2: Option<PathBuf>,
    /// Label evaluated (1 facial hair, 0 not facial hair, 2 shadow).
    #[arg(long, default_value_t = 1)]
    class: u8,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    #[command(flatten)]
    flags: Flags,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    #[command(flatten)]
    flags: Flags,
    /// Existing score cache; scores are recomputed when absent.
    #[arg(long)]
    scores: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[command(flatten)]
    flags: Flags,
    /// Hair-axis strength (0 removes the confound).
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    subjects: Option<usize>,
    #[arg(long)]
    images_per_subject: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    /// Comma-separated demographic tags, assigned to subjects round-robin.
    #[arg(long, value_delimiter = ',')]
    demographics: Vec<String>,
    /// Also write label masks and leave ratios to be derived from them.
    #[arg(long)]
    with_masks: bool,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[command(flatten)]
    flags: Flags,
    #[arg(long, value_enum, default_value = "text")]
    format: ReportFormat,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
    Json,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HIRSUTE_LOG", "warn"))
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Ingest(flags) => commands::ingest(&flags),
        Command::MaskEval(args) => commands::mask_eval(&args),
        Command::Score(args) => commands::score(&args.flags),
        Command::Calibrate(args) => commands::calibrate(&args),
        Command::Evaluate(flags) => commands::evaluate(&flags),
        Command::Synth(args) => commands::synth(&args),
        Command::Report(args) => commands::report(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
