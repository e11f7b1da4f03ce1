//! `kgsm`: simulate, calibrate, train, predict and cross-validate
//! knowledge-guided soil-moisture retrieval.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Failure;

#[derive(Debug, Parser)]
#[command(name = "kgsm", version, about, after_help = config::CONFIG_KEYS)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one configuration key, e.g. `--set training.window=6`.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,

    /// Seed for the generator, training and fold assignment.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for data-parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the effective configuration as TOML.
    Config,
    /// Generate a synthetic scene: synthetic.csv and truth.json.
    Simulate,
    /// Fit A, C and D by Nelder-Mead on labeled observations: calibration.json.
    Calibrate,
    /// Train the knowledge-guided LSTM: model.json, training_log.jsonl,
    /// train_predictions.csv.
    Train,
    /// Predict soil moisture for every acquisition: predictions.csv.
    Predict {
        /// Checkpoint written by `train`.
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
    },
    /// Spatial k-fold comparison of WCM and KG-LSTM: report.json,
    /// scatter CSVs and summary.txt.
    Crossval,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = config::load(cli.config.as_deref(), &cli.overrides).map_err(Failure::usage)?;
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    cfg.validate().map_err(Failure::usage)?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::usage("--threads must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(Failure::usage)?;
    }
    match cli.command {
        Command::Config => commands::show_config(&cfg),
        Command::Simulate => commands::simulate(&cfg),
        Command::Calibrate => commands::calibrate(&cfg),
        Command::Train => commands::train(&cfg),
        Command::Predict { checkpoint } => commands::predict(&cfg, &checkpoint),
        Command::Crossval => commands::crossval(&cfg),
    }
}
