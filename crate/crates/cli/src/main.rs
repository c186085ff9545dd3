//! `beamobs` command-line driver.
//!
//! Exit codes: 0 on success, 2 for configuration errors, 3 for numerical
//! failures (a `diagnostic.json` is written to the output directory), 1 for
//! anything else.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ExperimentConfig, OutputFormat, Overrides, SystemChoice};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(beamobs::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<beamobs::Error> for CliError {
    fn from(e: beamobs::Error) -> Self {
        match e {
            beamobs::Error::Io(io) => CliError::Io(io),
            other => CliError::Numerical(other),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "beamobs", version, about = "Observability-driven strain sensor placement on a cantilever beam")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Debug, Args)]
struct Flags {
    /// TOML or JSON experiment file; built-in defaults when absent.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Sensor budget for placement and estimation.
    #[arg(long, global = true, value_name = "P")]
    budget: Option<usize>,
    /// Number of retained modes for every subcommand.
    #[arg(long, global = true, value_name = "K")]
    modes: Option<usize>,
    #[arg(long, global = true, value_enum)]
    system: Option<SystemChoice>,
    /// Format of tabular outputs.
    #[arg(long, global = true, value_enum)]
    format: Option<OutputFormat>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Mode shapes, curvatures and natural frequencies.
    Modes,
    /// Objective J(x) along the beam for each retained mode count.
    Scan,
    /// Optimal sensor sets over the budget sweep.
    Place,
    /// UKF covariance comparison between layouts.
    Estimate,
    /// All of the above.
    Repro,
}

fn load_config(flags: &Flags) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &flags.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply(&Overrides {
        out: flags.out.clone(),
        seed: flags.seed,
        budget: flags.budget,
        modes: flags.modes,
        system: flags.system,
        format: flags.format,
    });
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli, cfg: &ExperimentConfig) -> Result<(), CliError> {
    let ctx = commands::Context::new(cfg)?;
    match cli.command {
        Command::Modes => commands::modes(&ctx),
        Command::Scan => commands::scan(&ctx),
        Command::Place => commands::place(&ctx),
        Command::Estimate => commands::estimate(&ctx),
        Command::Repro => commands::repro(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let cfg = match load_config(&cli.flags) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("beamobs: {e}");
            return ExitCode::from(2);
        }
    };
    match run(&cli, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("beamobs: configuration error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Numerical(e)) => {
            eprintln!("beamobs: numerical failure: {e}");
            if let Err(io) = commands::write_diagnostic(&cfg.output_dir, &e) {
                eprintln!("beamobs: could not write diagnostic: {io}");
            }
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("beamobs: {e}");
            ExitCode::from(1)
        }
    }
}
