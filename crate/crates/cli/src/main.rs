//! `dskd`: train, evaluate and ablate dual-student anomaly detectors.

mod commands;
mod config;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::exit::EXIT_USAGE;

#[derive(Parser, Debug)]
#[command(name = "dskd", version, about = "Dual-student distillation anomaly detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by `train` and `ablate`. Unset flags keep the value from
/// `--config` or the built-in default.
#[derive(Args, Debug, Default)]
pub struct RunArgs {
    /// Flat `key = value` config file (a `config.resolved` snapshot works).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset root laid out as `<root>/<category>/{train,test,ground_truth}`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub category: Option<String>,
    /// Square input side; 256 or 128 for standard runs, any multiple of 32.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Weight of the Euclidean term in the per-pixel discrepancy.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// First-level channel width; 64 is ResNet18.
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Teacher weights (safetensors, torchvision ResNet18 names).
    #[arg(long)]
    pub teacher: Option<PathBuf>,
    /// Seed of the random teacher used when no weights are given.
    #[arg(long)]
    pub teacher_seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// DS, T-E, T-D or E-D.
    #[arg(long)]
    pub variant: Option<String>,
    /// Feed the decoder the deepest normalized level instead of the embedding.
    #[arg(long)]
    pub no_dfe: bool,
    /// Levels fused at inference for the calibration, e.g. `M1-3` or `M2`.
    #[arg(long)]
    pub maps: Option<String>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = dskd_core::synth::CATEGORY)]
    pub category: String,
    /// Must match the checkpoint's input size when given.
    #[arg(long)]
    pub size: Option<usize>,
    /// Levels to fuse; defaults to the checkpoint's selection.
    #[arg(long)]
    pub maps: Option<String>,
    #[arg(long, default_value = "eval")]
    pub out: PathBuf,
    /// Blend heatmaps over the input image instead of writing grayscale.
    #[arg(long)]
    pub overlay: bool,
    /// Override the teacher weights recorded in the checkpoint.
    #[arg(long)]
    pub teacher: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Image files to score.
    #[arg(long = "image", required = true, num_args = 1..)]
    pub images: Vec<PathBuf>,
    #[arg(long)]
    pub maps: Option<String>,
    /// Write `<id>_amap.png` heatmaps here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub teacher: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated variants.
    #[arg(long, default_value = "DS,T-E,T-D,E-D")]
    pub variants: String,
    /// Comma-separated embedding settings, `on` and/or `off`.
    #[arg(long, default_value = "on")]
    pub dfe: String,
    /// Comma-separated map selections, e.g. `M1,M2,M3,M1-3`.
    #[arg(long, default_value = "M1-3")]
    pub maps: String,
    /// Train arms on separate threads.
    #[arg(long)]
    pub parallel: bool,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = dskd_core::synth::CATEGORY)]
    pub category: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub n_train: usize,
    #[arg(long, default_value_t = 64)]
    pub n_test: usize,
    #[arg(long, default_value_t = 0.5)]
    pub defect_rate: f64,
    /// Side of the generated images in pixels.
    #[arg(long, default_value_t = 256)]
    pub size: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train students on the defect-free training split.
    Train(TrainArgs),
    /// Score individual images with a checkpoint.
    Infer(InferArgs),
    /// Evaluate a checkpoint on the test split.
    Eval(EvalArgs),
    /// Train and compare variants, embedding settings and map fusions.
    Ablate(AblateArgs),
    /// Write a synthetic texture dataset.
    Synth(SynthArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Infer(a) => commands::infer(a),
        Command::Eval(a) => commands::eval(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Synth(a) => commands::synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
