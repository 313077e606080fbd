//! Command-line front end: base-calling pipeline, accelerator simulation,
//! process-variation Monte Carlo, toy training, and report aggregation.
//!
//! Exit codes: 0 on success, 2 for configuration errors, 3 for runtime
//! failures.

mod basecall;
mod config;
mod mc;
mod report_cmd;
mod simulate;
mod train;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use config::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// Command errors carry their exit code class.
#[derive(Debug)]
pub enum CliError {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    fn message(&self) -> &anyhow::Error {
        match self {
            CliError::Config(e) | CliError::Runtime(e) => e,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "helix",
    about = "Base-calling pipeline and crossbar accelerator simulator",
    version
)]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed overriding the configuration value.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for reports.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Tabular output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decode signal windows into reads, vote a consensus, classify errors.
    Basecall(basecall::BasecallArgs),
    /// Model throughput, power, and area for each scheme.
    Simulate,
    /// Write-duration Monte Carlo across cell sizes.
    Mc,
    /// Train the toy base-caller with either loss function.
    TrainToy(train::TrainArgs),
    /// Aggregate simulate outputs into the normalized comparison.
    Report(report_cmd::ReportArgs),
}

pub fn write_output(dir: &Path, name: &str, text: &str) -> Result<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = RunConfig::load(cli.config.as_deref()).map_err(CliError::Config)?;
    let seed = cfg.seed(cli.seed);
    match &cli.command {
        Command::Basecall(args) => basecall::run(args, &cfg, seed, &cli.out, cli.format),
        Command::Simulate => simulate::run(&cfg, &cli.out, cli.format),
        Command::Mc => mc::run(&cfg, seed, &cli.out, cli.format),
        Command::TrainToy(args) => train::run(args, &cfg, seed, &cli.out),
        Command::Report(args) => report_cmd::run(args, &cli.out, cli.format),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {:#}", err.message());
            ExitCode::from(err.code())
        }
    }
}
