use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod error;
mod output;

use error::CliError;

/// Simulate, fit and calibrate charge-state blinking of a tin-vacancy emitter.
#[derive(Debug, Parser)]
#[command(name = "snvsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by the simulation commands.
#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Run configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = "SNVSIM_OUT_DIR", default_value = "snvsim-out")]
    pub out: PathBuf,
    /// Replaces the repetition count of every simulated sequence.
    #[arg(long)]
    pub reps_override: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one pulse sequence and write the binned trace.
    Simulate(RunArgs),
    /// Simulate a power sweep and fit decay or recovery rates.
    Sweep(RunArgs),
    /// Generate consecutive PLE scan maps and their statistics.
    Ple(RunArgs),
    /// Solve emitter coefficients from a targets file.
    Calibrate {
        /// Targets file.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = "SNVSIM_OUT_DIR", default_value = "snvsim-out")]
        out: PathBuf,
    },
    /// Check an emitter file against a targets file.
    Verify {
        /// Emitter file.
        #[arg(long)]
        emitter: PathBuf,
        /// Targets file.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = "SNVSIM_OUT_DIR", default_value = "snvsim-out")]
        out: PathBuf,
    },
    /// Fit a model to an existing CSV.
    Fit(commands::fit::FitArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(a) => {
            set_threads(a.threads)?;
            commands::simulate::run(&a)
        }
        Command::Sweep(a) => {
            set_threads(a.threads)?;
            commands::sweep::run(&a)
        }
        Command::Ple(a) => {
            set_threads(a.threads)?;
            commands::ple::run(&a)
        }
        Command::Calibrate { config, out } => commands::calibrate::calibrate(&config, &out),
        Command::Verify { emitter, config, out } => commands::calibrate::verify(&emitter, &config, &out),
        Command::Fit(a) => commands::fit::run(&a),
    }
}

fn set_threads(n: Option<usize>) -> Result<(), CliError> {
    if let Some(n) = n {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("snvsim: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
