//! `wavecorr`: dataset generation, training, evaluation, Parareal runs,
//! sweeps and field renders at desk or canonical scale.

mod commands;
mod config;
mod manifest;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use manifest::{CliError, EXIT_CONFIG};

#[derive(Parser)]
#[command(name = "wavecorr", version, about = "Learned coarse-to-fine wave propagation with Parareal")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate seeded trajectory shards and a dataset manifest.
    Generate(Common),
    /// Train an end-to-end propagator; writes a checkpoint and loss.csv.
    Train(Common),
    /// Autoregressive rollouts of a model and the E2E-V baseline.
    Evaluate(Common),
    /// Parareal solves with a learned or bilinear coarse propagator.
    Parareal(Common),
    /// Grayscale PNG renders of stored trajectories and predictions.
    Render(Common),
    /// Grid search over learning rate, weight decay and batch size.
    Sweep(Common),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    /// 32x32 coarse / 64x64 fine, 50 training shards.
    Desk,
    /// 64x64 coarse / 128x128 fine, 5000 training shards. Compute heavy.
    Canonical,
}

#[derive(Args, Clone, Debug)]
pub struct Common {
    /// JSON config, or a manifest.json written by the same command.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the command's seed key.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; 1 gives bit-identical reruns.
    #[arg(long)]
    threads: Option<usize>,
    /// Defaults the config is layered on.
    #[arg(long, value_enum, default_value = "desk")]
    profile: Profile,
    /// Dataset directory or manifest.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Model checkpoint directory.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Overrides one config key, e.g. `--set train.epochs=5`.
    #[arg(long = "set", value_name = "KEY=JSON")]
    set: Vec<String>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (name, common) = match &cli.command {
        Command::Generate(c) => ("generate", c),
        Command::Train(c) => ("train", c),
        Command::Evaluate(c) => ("evaluate", c),
        Command::Parareal(c) => ("parareal", c),
        Command::Render(c) => ("render", c),
        Command::Sweep(c) => ("sweep", c),
    };
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(CliError::config("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(e.to_string()))?;
    }
    match name {
        "generate" => commands::generate::run(common),
        "train" => commands::train::run(common),
        "evaluate" => commands::evaluate::run(common),
        "parareal" => commands::parareal::run(common),
        "render" => commands::render::run(common),
        _ => commands::sweep::run(common),
    }
}
