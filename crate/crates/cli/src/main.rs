//! `csiam`: data generation, augmentation inspection, training, probing,
//! gradient verification and evaluation.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "csiam",
    version,
    about = "Contrastive siamese semi-supervised speech recognition toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic corpus (features, labels, manifest).
    GenData(GenDataArgs),
    /// Run joint training from a config file.
    Train(TrainArgs),
    /// Train per-layer probes on a frozen encoder and write the accuracy curve.
    Probe(ProbeArgs),
    /// Apply a time warp, tempo change or masking to a feature or WAV file.
    Augment(AugmentArgs),
    /// Verify analytic gradients against central differences.
    GradCheck(GradCheckArgs),
    /// Report retrieval accuracy and greedy-decoding error of a checkpoint.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Config file; only its [data] section is used.
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: std::path::PathBuf,
    /// Number of utterances.
    #[arg(long, default_value_t = 10)]
    pub num: usize,
    /// Overrides the corpus seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the per-frame noise level (0 gives a separable corpus).
    #[arg(long)]
    pub noise_std: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run config (TOML with [data] [encoder] [label_encoder] [predictor]
    /// [joint] [loss] [train] [augment] sections).
    #[arg(long)]
    pub config: std::path::PathBuf,
    /// Train until this many steps are complete (default: train.total_steps).
    #[arg(long)]
    pub steps: Option<u64>,
    /// Continue from a checkpoint.
    #[arg(long)]
    pub resume: Option<std::path::PathBuf>,
    /// Metrics file, one JSON object per step (appended when resuming).
    #[arg(long, default_value = "metrics.jsonl")]
    pub metrics_path: std::path::PathBuf,
    /// Write a checkpoint every N steps (0: only at the end).
    #[arg(long, default_value_t = 0)]
    pub ckpt_every: u64,
    /// Checkpoint directory.
    #[arg(long, default_value = "checkpoints")]
    pub ckpt_dir: std::path::PathBuf,
    /// Overrides train.seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    /// Trained checkpoint.
    #[arg(long)]
    pub ckpt: std::path::PathBuf,
    /// Corpus directory written by gen-data.
    #[arg(long)]
    pub data: std::path::PathBuf,
    /// Output CSV.
    #[arg(long)]
    pub out: std::path::PathBuf,
    #[arg(long, default_value_t = 256)]
    pub hidden_dim: usize,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Comma-separated layer indices (default: all).
    #[arg(long, value_delimiter = ',')]
    pub layers: Option<Vec<usize>>,
    #[arg(long, default_value_t = 11)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Input `.csft` features or `.wav` audio.
    #[arg(long)]
    pub input: std::path::PathBuf,
    /// Output path (same format as the input).
    #[arg(long)]
    pub output: std::path::PathBuf,
    /// Sinusoidal time warp drawn with this seed (features only).
    #[arg(long)]
    pub warp_seed: Option<u64>,
    /// Uniform tempo ratio (> 1 speeds up).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Pass the input through unchanged.
    #[arg(long)]
    pub identity: bool,
    /// Span masking drawn with this seed (features only).
    #[arg(long)]
    pub mask_seed: Option<u64>,
    #[arg(long, default_value_t = 0.016)]
    pub mask_prob: f64,
    #[arg(long, default_value_t = 28)]
    pub mask_span: usize,
    /// Write the downsampled alignment map as CSV.
    #[arg(long)]
    pub emit_alignment: Option<std::path::PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    /// Only this component: joint, contrastive, rnnt or composite.
    #[arg(long)]
    pub component: Option<String>,
    /// Negate analytic gradients (checks that failures are detected).
    #[arg(long, hide = true)]
    pub inject_sign_flip: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: std::path::PathBuf,
    /// Run config the checkpoint was trained with.
    #[arg(long)]
    pub config: std::path::PathBuf,
    /// Held-out synthetic utterances to evaluate.
    #[arg(long, default_value_t = 32)]
    pub utterances: usize,
    #[arg(long, default_value_t = 99)]
    pub seed: u64,
}

fn init_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("CSIAM_THREADS") {
        let n: usize = v.parse().map_err(|_| {
            CliError::Usage(format!(
                "CSIAM_THREADS must be a positive integer, got '{v}'"
            ))
        })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Runtime(e.into()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = init_threads().and_then(|()| match cli.command {
        Command::GenData(a) => commands::gen_data(&a),
        Command::Train(a) => commands::train(&a),
        Command::Probe(a) => commands::probe(&a),
        Command::Augment(a) => commands::augment(&a),
        Command::GradCheck(a) => commands::grad_check(&a),
        Command::Eval(a) => commands::eval(&a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
