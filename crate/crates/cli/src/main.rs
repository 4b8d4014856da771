mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use circafactor::sampler::Mode;
use circafactor::Error;

#[derive(Parser)]
#[command(name = "circafactor", version, about = "Rhythm detection with a latent-factor Fourier model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its ground truth.
    Simulate(SimulateArgs),
    /// Run the sampler on a dataset and write the posterior archive.
    Fit(FitArgs),
    /// Turn an archive into per-probe summaries, a discovery list and a
    /// correlation edge list.
    Summarize(SummarizeArgs),
    /// ROC and FDR curves plus an AUC table for one or more score files.
    Evaluate(EvaluateArgs),
    /// Fisher g-test p-values for every probe of a dataset.
    Baseline(BaselineArgs),
    /// Histogram of the prior probability that a local coefficient is kept.
    Sparsity(SparsityArgs),
    /// Joint-distribution check of the sampler on a tiny model.
    Geweke(GewekeArgs),
}

#[derive(Args)]
pub struct SimulateArgs {
    /// JSON config; must contain "seed".
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct FitArgs {
    /// Dataset CSV with a `probe_id,t=<hours>,...` header.
    #[arg(long)]
    pub data: PathBuf,
    /// JSON config; must contain "seed".
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the mode given in the config.
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Directory receiving the archive and the resolved config.
    #[arg(long)]
    pub out: PathBuf,
    /// Checkpoint directory; defaults to `<out>/checkpoint`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Continue from the checkpoint.
    #[arg(long)]
    pub resume: bool,
    /// Checkpoint and exit after this sweep.
    #[arg(long)]
    pub stop_after: Option<u64>,
    /// Log progress every this many sweeps; 0 disables.
    #[arg(long, default_value_t = 500)]
    pub log_every: u64,
}

#[derive(Args)]
pub struct SummarizeArgs {
    #[arg(long)]
    pub archive: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 24.0)]
    pub target_period: f64,
    /// Bound on the expected false discovery rate of the discovery list.
    #[arg(long, default_value_t = 0.05)]
    pub k_star: f64,
    /// Minimum absolute correlation for an edge.
    #[arg(long, default_value_t = 0.5)]
    pub edge_threshold: f64,
    /// Average per-snapshot correlations instead of standardizing the
    /// posterior mean covariance.
    #[arg(long)]
    pub snapshot_correlation: bool,
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// Truth JSON written by `simulate`.
    #[arg(long)]
    pub truth: PathBuf,
    /// `name=path` of a score file; repeat for several methods.
    #[arg(long = "scores", required = true)]
    pub scores: Vec<String>,
    /// Positive class: `periodic` or `circadian`.
    #[arg(long, default_value = "periodic")]
    pub label: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct SparsityArgs {
    #[arg(long, default_value_t = 1.0)]
    pub a: f64,
    #[arg(long, default_value_t = 10.0)]
    pub b: f64,
    #[arg(long, default_value_t = 100_000)]
    pub draws: usize,
    #[arg(long, default_value_t = 50)]
    pub bins: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct GewekeArgs {
    #[arg(long, default_value = "dependent")]
    pub mode: Mode,
    #[arg(long, default_value_t = 20_000)]
    pub outer: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Numerical(_) => 3,
                Error::ResumeMismatch(_) => 4,
                _ => 2,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Fit(a) => commands::fit(&a),
        Command::Summarize(a) => commands::summarize(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Baseline(a) => commands::baseline(&a),
        Command::Sparsity(a) => commands::sparsity(&a),
        Command::Geweke(a) => commands::geweke(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
