//! Experiment pipelines for hard-label knowledge distillation.
//!
//! Every subcommand reads one JSON config (see `config.rs`), writes its
//! resolved copy next to the outputs, and emits machine-parseable progress
//! events on standard error. Exit codes: 0 success, 2 configuration error,
//! 3 query budget exhausted, 4 numerical failure.

mod commands;
mod config;
mod loaders;
mod runio;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use boundary_kd::Error;
use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "boundary-kd",
    version,
    about = "Distillation from hard-label teachers"
)]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config's global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for parallel stages (default: available parallelism).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Output directory.
    #[arg(long, global = true, default_value = "run-out")]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a teacher network with plain cross-entropy.
    TrainTeacher,
    /// Per-sample boundary-distance records and the class-distance heatmap.
    Robustness,
    /// Soft labels from robustness records into a transfer set.
    Labels,
    /// Train a student (db3kd, student_ce, standard_kd, surrogate_kd,
    /// noise_logits).
    Distill,
    /// Zero-shot pseudo-sample generation (optionally augmented).
    Generate,
    /// Grid of runs over query budget, iterations, sample count or
    /// temperature.
    Sweep,
    /// Accuracy, per-class accuracy and confusion matrix of a checkpoint.
    Evaluate,
    /// White-box `1 - softmax` distance heatmap from a checkpoint.
    WhiteboxHeatmap,
}

fn exit_code_for(error: &Error) -> u8 {
    match error {
        Error::BudgetExhausted { .. } => 3,
        Error::Divergence { .. }
        | Error::GradientEstimationFailed
        | Error::NonPositiveDistance { .. } => 4,
        _ => 2,
    }
}

fn run(cli: &Cli) -> boundary_kd::Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(workers) = cli.workers {
        config.workers = Some(workers);
    }
    if let Some(workers) = config.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    }
    match cli.command {
        Command::TrainTeacher => commands::cmd_train_teacher(&config, &cli.out_dir),
        Command::Robustness => commands::cmd_robustness(&config, &cli.out_dir),
        Command::Labels => commands::cmd_labels(&config, &cli.out_dir),
        Command::Distill => commands::cmd_distill(&config, &cli.out_dir),
        Command::Generate => commands::cmd_generate(&config, &cli.out_dir),
        Command::Sweep => commands::cmd_sweep(&config, &cli.out_dir),
        Command::Evaluate => commands::cmd_evaluate(&config, &cli.out_dir),
        Command::WhiteboxHeatmap => commands::cmd_whitebox_heatmap(&config, &cli.out_dir),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
