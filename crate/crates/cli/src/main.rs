//! Batch front-end: parses a JSON run configuration, dispatches the command,
//! and writes machine-readable artifacts plus a manifest.
//!
//! Exit codes: 0 success, 2 validation failure, 3 numerical failure,
//! 4 Monte Carlo underflow advisory escalated. Thread count comes from the
//! `OMPATH_THREADS` environment variable; everything else lives in the config.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

pub use config::RunConfig;
pub use run::RunError;

#[derive(Parser)]
#[command(
    name = "ompath",
    version,
    about = "Stochastic Hamiltonian path experiments"
)]
struct Cli {
    #[command(subcommand)]
    action: Action,
}

#[derive(Subcommand)]
enum Action {
    /// Execute a run configuration.
    Run {
        /// JSON configuration file.
        config: PathBuf,
    },
    /// Parse and validate a configuration without running it.
    Validate {
        /// JSON configuration file.
        config: PathBuf,
    },
}

fn load(path: &PathBuf) -> Result<RunConfig, RunError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| RunError::Validation(format!("{}: {e}", path.display())))?;
    RunConfig::from_json(&text)
}

fn threads_from_env() -> Option<usize> {
    let value = std::env::var("OMPATH_THREADS").ok()?;
    match value.parse::<usize>() {
        Ok(n) if n >= 1 => Some(n),
        _ => {
            eprintln!("ompath: ignoring OMPATH_THREADS={value:?} (want a positive integer)");
            None
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = threads_from_env();
    if let Some(n) = threads {
        // a failure here only means the pool was already initialized
        let _ = ompath::configure_threads(n);
    }

    let result = match &cli.action {
        Action::Run { config } => load(config).and_then(|c| run::execute(&c, threads)),
        Action::Validate { config } => load(config).map(|_| ()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ompath: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
