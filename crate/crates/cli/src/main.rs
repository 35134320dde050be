mod commands;
mod config;
mod error;
mod gradcheck;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::Result;
use crate::gradcheck::GradCheckOptions;

/// Toy laboratory for alpha-divergence preference optimization.
#[derive(Debug, Parser)]
#[command(name = "apo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train on the toy environment and write metrics, config snapshot and final policy.
    Run {
        /// TOML run configuration.
        config: PathBuf,
    },
    /// Compare every analytic gradient against central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Group sizes to test.
        #[arg(long, value_delimiter = ',', default_value = "2,4,8,16")]
        sizes: Vec<usize>,
        /// Random instances per size.
        #[arg(long, default_value_t = 20)]
        instances: usize,
        /// Test hook: perturb the analytic gradients so the check must fail.
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
    /// Train once per fixed alpha and summarize the final policies in sweep.csv.
    SweepAlpha {
        config: PathBuf,
        /// Comma-separated alphas, e.g. 0.35,0.6,0.95.
        #[arg(long, allow_hyphen_values = true)]
        grid: String,
    },
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config } => commands::cmd_run(&config),
        Command::Gradcheck {
            seed,
            sizes,
            instances,
            corrupt_gradient,
        } => gradcheck::cmd_gradcheck(&GradCheckOptions {
            seed,
            sizes,
            instances,
            corrupt: corrupt_gradient,
        }),
        Command::SweepAlpha { config, grid } => commands::cmd_sweep_alpha(&config, &grid).map(|_| ()),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("apo: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
