//! `acsmc`: likelihood estimation, simulation and SMC² inference driven
//! by a TOML or JSON config.
//!
//! Exit codes: 0 on success, 2 for configuration or input errors, 3 for
//! numerical failures.

mod commands;
mod config;
mod data;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Config, Method};
use error::CliError;

#[derive(Parser)]
#[command(name = "acsmc", version, about = "Annealed controlled SMC and SMC² for state-space models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Replicated log-likelihood estimates as CSV, with a JSON summary.
    Likelihood {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        method: Option<Method>,
        #[arg(long)]
        reps: Option<usize>,
    },
    /// Writes the simulated dataset described by the config.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Include the latent states as extra columns.
        #[arg(long)]
        states: bool,
    },
    /// Adaptive SMC² posterior summary and model evidence as JSON.
    Infer {
        #[command(flatten)]
        common: Common,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many iterations in this invocation (the
        /// checkpoint keeps the state).
        #[arg(long)]
        stop_after: Option<usize>,
    },
}

fn setup(common: &Common) -> Result<Config, CliError> {
    #[cfg(feature = "parallel")]
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot start {n} worker threads: {e}")))?;
    }
    #[cfg(not(feature = "parallel"))]
    if common.threads.is_some_and(|n| n > 1) {
        eprintln!("warning: built without the `parallel` feature; running on one thread");
    }
    let mut config = Config::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Likelihood { common, method, reps } => {
            let mut config = setup(&common)?;
            if let Some(lk) = config.likelihood.as_mut() {
                lk.method = method.unwrap_or(lk.method);
                lk.reps = reps.unwrap_or(lk.reps);
            }
            commands::likelihood_cmd(&config, common.out.as_deref())
        }
        Command::Simulate { common, states } => {
            let config = setup(&common)?;
            commands::simulate_cmd(&config, common.out.as_deref(), states)
        }
        Command::Infer { common, resume, stop_after } => {
            let config = setup(&common)?;
            commands::infer_cmd(&config, common.out.as_deref(), resume.as_deref(), stop_after)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
