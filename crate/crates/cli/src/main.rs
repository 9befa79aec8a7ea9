//! `gdpo` command-line driver.

mod commands;
mod config;
mod error;
mod run_dir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::TrainFlags;

#[derive(Parser)]
#[command(
    name = "gdpo",
    version,
    about = "Clustered, group-amortized preference optimization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled landscape.
    Synth(SynthArgs),
    /// Cluster sequences by union mask.
    Cluster(ClusterArgs),
    /// Fit a reference model and train one method.
    Train(TrainArgs),
    /// Train both methods from one reference and report side by side.
    Compare(CompareArgs),
    /// Repeat g-DPO training over values of tau or g.
    Sweep(SweepArgs),
}

#[derive(Args, Clone)]
struct OutputArgs {
    /// Root under which per-run directories are created.
    #[arg(long, env = "GDPO_OUTPUT_DIR", default_value = "runs")]
    output_root: PathBuf,
    /// Exact run directory, bypassing the timestamped name.
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Labeled sequences (`.csv` or `.fasta`).
    #[arg(long)]
    data: PathBuf,
    /// Overrides the format implied by the extension.
    #[arg(long)]
    format: Option<String>,
    /// Wild-type record id; defaults to `wt` when present.
    #[arg(long)]
    wild_type: Option<String>,
    /// Residue alphabet.
    #[arg(long, default_value = gdpo::seqdata::AMINO_ACIDS)]
    alphabet: String,
}

/// Like [`DataArgs`] but optional, for commands that can resume instead.
#[derive(Args, Clone)]
struct ResumableDataArgs {
    /// Labeled sequences (`.csv` or `.fasta`).
    #[arg(long, required_unless_present = "resume")]
    data: Option<PathBuf>,
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    wild_type: Option<String>,
    #[arg(long, default_value = gdpo::seqdata::AMINO_ACIDS)]
    alphabet: String,
}

#[derive(Args)]
struct SynthArgs {
    /// Number of variants (the wild type is added on top).
    #[arg(long)]
    n: usize,
    /// Sequence length.
    #[arg(long = "L", visible_alias = "length")]
    length: usize,
    /// Fraction of positions that may carry mutations.
    #[arg(long, default_value_t = 0.4)]
    breadth: f64,
    #[arg(long, default_value_t = 4)]
    max_mutations: usize,
    /// `additive` or `pairwise-epistatic`.
    #[arg(long, default_value = "pairwise-epistatic")]
    ground_truth: String,
    #[arg(long, default_value_t = 0.1)]
    noise_sd: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "csv")]
    format: String,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct ClusterArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0.3)]
    tau: f64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: ResumableDataArgs,
    /// `dpo` or `gdpo`.
    #[arg(long, default_value = "gdpo")]
    method: String,
    #[command(flatten)]
    flags: TrainFlags,
    /// Continue the run stored in this directory.
    #[arg(long, conflicts_with = "data")]
    resume: Option<PathBuf>,
    /// Save a resumable state and exit once this many steps are done.
    #[arg(long)]
    stop_after: Option<u64>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Ground-truth sidecar written by `synth`.
    #[arg(long)]
    ground_truth: PathBuf,
    #[command(flatten)]
    flags: TrainFlags,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    /// `tau` or `g`.
    #[arg(long)]
    param: String,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    /// Sweep points trained concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    flags: TrainFlags,
    #[command(flatten)]
    output: OutputArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let argv: Vec<String> = std::env::args().collect();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a, &argv),
        Command::Cluster(a) => commands::cluster(a, &argv),
        Command::Train(a) => commands::train(a, &argv),
        Command::Compare(a) => commands::compare(a, &argv),
        Command::Sweep(a) => commands::sweep(a, &argv),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
