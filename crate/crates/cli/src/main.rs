//! `miwols` command-line driver.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use miwols::weights::WeightKind;

use commands::{BalanceArgs, Common};
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "miwols", version, about = "Doubly robust estimation with partially observed confounders")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Config file (TOML, or JSON by extension).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, default_value = "miwols-out")]
    out: PathBuf,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; defaults to all available cores.
    #[arg(long, global = true, env = "MIWOLS_WORKERS")]
    workers: Option<usize>,

    /// Replications per scenario.
    #[arg(long, global = true)]
    reps: Option<usize>,

    /// Sample size.
    #[arg(long, global = true)]
    n: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the selected estimators to a CSV dataset.
    Estimate,
    /// Run a Monte Carlo grid declared in a config file.
    Simulate,
    /// Run the sixteen-scenario comparison grid and write it in table layout.
    #[command(name = "replicate-table1")]
    ReplicateTable1,
    /// Generate the synthetic cohort and fit every method under each
    /// combination of working models.
    #[command(name = "replicate-table3")]
    ReplicateTable3 {
        /// Also write the generated cohort and a ready-to-run estimate config.
        #[arg(long)]
        export_cohort: bool,
    },
    /// Report the balancing defect of each weighting scheme.
    BalanceCheck {
        /// Schemes to check (repeatable); defaults to all.
        #[arg(long = "scheme")]
        schemes: Vec<WeightKind>,
        /// Marginal treated probability used by SIPW; defaults to the
        /// dataset's treated fraction, or 0.5 without a dataset.
        #[arg(long)]
        p_bar: Option<f64>,
        #[arg(long, default_value_t = 99)]
        grid_points: usize,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let common = Common {
        config: cli.config,
        out: cli.out,
        seed: cli.seed,
        workers: cli.workers,
        reps: cli.reps,
        n: cli.n,
    };
    if common.workers == Some(0) {
        return Err(CliError::Config("--workers must be positive".into()));
    }
    match cli.command {
        Command::Estimate => commands::estimate(&common),
        Command::Simulate => commands::simulate(&common),
        Command::ReplicateTable1 => commands::replicate_table1(&common),
        Command::ReplicateTable3 { export_cohort } => commands::replicate_table3(&common, export_cohort),
        Command::BalanceCheck { schemes, p_bar, grid_points } => {
            commands::balance_check(&common, &BalanceArgs { schemes, p_bar, grid_points })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("miwols: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
