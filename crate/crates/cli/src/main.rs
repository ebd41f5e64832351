//! `photospike` experiment runner.
//!
//! Every command writes its outputs plus `resolved-config.json` into the
//! output directory. Exit codes: 0 success, 2 configuration error, 3
//! protocol error, 4 numeric failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use photospike::Error;

use config::{ExperimentConfig, Task};

#[derive(Debug, Parser)]
#[command(name = "photospike", version, about = "Hybrid photonic-spiking reinforcement learning experiments")]
struct Cli {
    /// JSON experiment config; missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default `runs/<command>`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    task: Option<Task>,
    /// Remote environment, `tcp:host:port` or `stdio:command args`.
    #[arg(long, global = true)]
    endpoint: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the software actor with TD3.
    Train,
    /// Extract the L2 test set from a trained actor and calibrate the mesh.
    Calibrate {
        /// Actor snapshot written by `train`.
        #[arg(long)]
        snapshot: PathBuf,
        /// Stop at the first iteration reaching this similarity.
        #[arg(long)]
        target_similarity: Option<f64>,
    },
    /// Compare software and mesh-backed inference on the test set.
    Compare {
        /// Weight snapshot written by `calibrate`.
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        voltages: PathBuf,
    },
    /// Fine-tune L1, L3 and the critics with L2 frozen at the hardware matrix.
    Cotrain {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        voltages: PathBuf,
        /// Critics written by `train`; fresh critics when omitted.
        #[arg(long)]
        critics: Option<PathBuf>,
    },
    /// Steps-to-threshold comparison of `train` and `cotrain` run directories.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Protocol(_) => 3,
        Error::Numeric(_) | Error::UndefinedSimilarity => 4,
        _ => 2,
    }
}

fn run(cli: Cli) -> photospike::Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out = Some(out);
    }
    if let Some(endpoint) = cli.endpoint {
        cfg.endpoint = Some(endpoint);
        cfg.task = Task::Remote;
    }
    if let Some(task) = cli.task {
        cfg.task = task;
    }
    if let Command::Calibrate {
        target_similarity: Some(t),
        ..
    } = &cli.command
    {
        cfg.spgd.target_similarity = *t;
    }
    let cfg = cfg.resolve()?;
    match &cli.command {
        Command::Train => commands::train(&cfg),
        Command::Calibrate { snapshot, .. } => commands::calibrate(&cfg, snapshot),
        Command::Compare { weights, voltages } => commands::compare(&cfg, weights, voltages),
        Command::Cotrain {
            weights,
            voltages,
            critics,
        } => commands::cotrain(&cfg, weights, voltages, critics.as_deref()),
        Command::Report { runs } => commands::report(&cfg, runs),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("photospike: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
