//! `aflow`: synthetic traces, locality analysis, cache simulation and
//! classification with an aggregate-flow cache.

mod capacity;
mod cmd;
mod error;
mod io;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::CliError;
use crate::io::TraceFormat;

#[derive(Debug, Parser)]
#[command(name = "aflow", version, about = "Aggregate-flow cache toolkit")]
pub struct Cli {
    /// Base seed for every random choice.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Trace format; inferred from the file extension when omitted.
    #[arg(long, global = true, value_enum)]
    pub format: Option<TraceFormat>,
    /// Output file (stdout when omitted).
    #[arg(long, short, global = true)]
    pub out: Option<PathBuf>,
    /// No progress messages on stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic trace.
    Generate(cmd::generate::Args),
    /// Popularity and temporal-locality report for a trace.
    Analyze(cmd::analyze::Args),
    /// Hit ratio of each replacement policy at each capacity.
    Simulate(cmd::simulate::Args),
    /// Run the classification pipeline and report workload.
    Classify(cmd::classify::Args),
    /// Time the pipeline per engine and policy.
    Bench(cmd::bench::Args),
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Generate(a) => cmd::generate::run(cli, a),
        Command::Analyze(a) => cmd::analyze::run(cli, a),
        Command::Simulate(a) => cmd::simulate::run(cli, a),
        Command::Classify(a) => cmd::classify::run(cli, a),
        Command::Bench(a) => cmd::bench::run(cli, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            e.class.exit_code()
        }
    }
}
