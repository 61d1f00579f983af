use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use privlab::commands::{execute, Command, RunOptions};
use privlab::config::ExperimentConfig;
use privlab::error::LabError;

/// Federated-learning privacy lab: gradient-inversion attacks, protection
/// mechanisms and their complexity bounds.
#[derive(Debug, Parser)]
#[command(name = "privlab", version)]
struct Cli {
    /// Experiment configuration (TOML). The built-in reference instance is
    /// used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Keep every n-th attack iteration in traces.jsonl.
    #[arg(long, global = true, default_value_t = 1)]
    trace_stride: usize,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Run FedSGD sessions, attack the target upload, write traces and complexities.
    Attack,
    /// Evaluate every bound calculator.
    Bounds,
    /// Estimate the MBP level of the configured mechanism by simulation.
    EstimateMbp,
    /// Rank protection designs over the configured grid.
    Sweep,
    /// Run the acceptance checks.
    Validate {
        /// Comma-separated check names to run.
        #[arg(long, value_delimiter = ',')]
        only: Vec<String>,
    },
}

fn run(cli: Cli) -> Result<(), LabError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default_config(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.output_dir = out;
    }
    let command = match cli.command {
        Cmd::Attack => Command::Attack,
        Cmd::Bounds => Command::Bounds,
        Cmd::EstimateMbp => Command::EstimateMbp,
        Cmd::Sweep => Command::Sweep,
        Cmd::Validate { only } => {
            if !only.is_empty() {
                cfg.validate.only = only;
            }
            Command::Validate
        }
    };
    let mut opts = RunOptions {
        trace_stride: cli.trace_stride,
        ..RunOptions::default()
    };
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(LabError::Config("--workers must be >= 1".into()));
        }
        opts.workers = w;
    }
    if opts.trace_stride == 0 {
        return Err(LabError::Config("--trace-stride must be >= 1".into()));
    }
    let out = execute(command, &cfg, &opts)?;
    eprintln!("wrote {} to {}", out.names().join(", "), cfg.output_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("privlab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
