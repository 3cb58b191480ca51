//! `textpose`: corpus synthesis and import, training, evaluation, sweeps,
//! ablations, inference and skeleton rendering.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};

use crate::error::EXIT_USAGE;

#[derive(Parser)]
#[command(name = "textpose", version, about = "Text-conditioned 2D pose generation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic caption→pose corpus.
    Synth(SynthArgs),
    /// Convert OpenPose JSON output into a PoseCap JSONL file.
    ImportOpenpose(ImportArgs),
    /// Train a model and write checkpoints, history and a run manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one corpus split.
    Eval(EvalArgs),
    /// One-factor-at-a-time hyperparameter sweep.
    Sweep(SweepArgs),
    /// Train and score each component ablation.
    Ablate(AblateArgs),
    /// Predict poses for captions.
    Infer(InferArgs),
    /// Draw skeleton images from a pose file.
    Render(RenderArgs),
    /// Compare analytic and finite-difference gradients.
    GradCheck(GradCheckArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 5000)]
    pub n: usize,
    /// Coordinate jitter sigma in normalized units.
    #[arg(long, default_value_t = 0.01)]
    pub jitter: f64,
    /// Probability of an extra occlusion per joint, in [0, 0.5).
    #[arg(long, default_value_t = 0.05)]
    pub occlusion: f64,
    #[arg(long, default_value_t = 3)]
    pub paraphrases: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ImportArgs {
    /// Directory of OpenPose `*.json` files.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Caption map: a JSON object or JSONL of `{id, caption}`.
    #[arg(long)]
    pub captions: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub conf_threshold: f64,
    #[arg(long, default_value_t = 256)]
    pub width: u32,
    #[arg(long, default_value_t = 256)]
    pub height: u32,
}

#[derive(Args)]
pub struct DataArgs {
    /// Corpus directory with train/val/test JSONL files.
    #[arg(long)]
    pub corpus: PathBuf,
    /// PCEB embedding table keyed by sample id.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Fail on ids missing from the embedding table instead of hashing.
    #[arg(long)]
    pub no_fallback: bool,
}

#[derive(Args)]
pub struct TrainOverrides {
    /// Training config (TOML or JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainOverrides,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Report path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainOverrides,
    /// Candidate grid (TOML or JSON); the published grid when absent.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainOverrides,
    /// Flag sets as `{rows = [...]}` (TOML or JSON); the published preset when absent.
    #[arg(long)]
    pub flags: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, conflicts_with = "captions", required_unless_present = "captions")]
    pub caption: Option<String>,
    /// JSONL of `{id, caption}` objects or plain caption lines.
    #[arg(long)]
    pub captions: Option<PathBuf>,
    /// PCEB embedding table keyed by caption id.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Prediction JSONL path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also draw each prediction into this directory.
    #[arg(long)]
    pub render_dir: Option<PathBuf>,
    #[arg(long, default_value = "svg")]
    pub format: String,
}

#[derive(Args)]
pub struct RenderArgs {
    /// Pose JSONL: corpus records or inference output.
    #[arg(long)]
    pub poses: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "svg")]
    pub format: String,
}

#[derive(Args)]
pub struct GradCheckArgs {
    /// Training config whose model and loss weights are checked; a small
    /// default model when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 48)]
    pub max_entries: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Usage line of the named subcommand, or of the whole program.
fn usage_for(subcommand: Option<&str>) -> String {
    let mut cli = Cli::command();
    cli.build();
    let usage = match subcommand.and_then(|name| cli.find_subcommand_mut(name)) {
        Some(sub) => sub.render_usage(),
        None => cli.render_usage(),
    };
    usage.to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            if code != 0 {
                let rendered = e.render().to_string();
                if !rendered.contains("Usage:") {
                    eprintln!("\n{}", usage_for(std::env::args().nth(1).as_deref()));
                }
                let first = rendered.split("\n\n").next().unwrap_or_default();
                let message = first.split_whitespace().collect::<Vec<_>>().join(" ");
                let message = message.trim_start_matches("error: ");
                eprintln!("{}", error::CliError::usage(message).to_json());
            }
            return ExitCode::from(code as u8);
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::ImportOpenpose(a) => commands::import_openpose(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Infer(a) => commands::infer(a),
        Command::Render(a) => commands::render(a),
        Command::GradCheck(a) => commands::grad_check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
