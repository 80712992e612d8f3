//! `ivkit` command line: config-driven causal-inference pipelines.

mod config;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "ivkit",
    version,
    about = "Causal-inference pipelines: descriptives, OLS, IV (2SLS/LIML/GMM/IGMM), \
             propensity-score matching, and Heckman selection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every step of a pipeline config and write its reports.
    Run { config: PathBuf },
    /// Generate the configured synthetic dataset plus its truth sidecar.
    Simulate { config: PathBuf },
    /// Parse and validate a config without running it.
    Validate { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config } => pipeline::run(config),
        Command::Simulate { config } => pipeline::simulate(config),
        Command::Validate { config } => pipeline::validate(config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
