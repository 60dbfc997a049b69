//! `dperm` command-line tool.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Command, RunConfig, Settings};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] dperm::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Data(_) => 5,
            Self::Core(e) => core_exit_code(e),
        }
    }
}

fn core_exit_code(e: &dperm::Error) -> u8 {
    use dperm::Error as E;
    match e {
        E::InvalidParameter { .. }
        | E::MixedBudgetKinds
        | E::MissingDelta
        | E::UnsupportedConversion(_)
        | E::MechanismMismatch(_) => 2,
        E::BudgetTooSmall { .. } => 3,
        E::NoConvergence(_) => 4,
        E::ReplicateFailed { source, .. } => core_exit_code(source),
        _ => 5,
    }
}

#[derive(Debug, Parser)]
#[command(name = "dperm", version, about = "Differentially private ERM with private confidence intervals")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Train a private model and write the fit as JSON.
    Train(RunArgs),
    /// Build confidence intervals for a fit written by `train`.
    Ci(RunArgs),
    /// Measure coverage and interval lengths with the bootstrap harness.
    Evaluate(RunArgs),
    /// Generate a synthetic dataset in the processed CSV format.
    Synth(RunArgs),
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// TOML file of key = value settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    settings: Settings,
}

fn resolve(command: Command, args: RunArgs) -> Result<RunConfig, CliError> {
    let base = match &args.config {
        Some(path) => Settings::from_file(path)?,
        None => Settings::default(),
    };
    // entropy seeds stay below 2^63 so they fit a config file integer
    let (cfg, drew) = RunConfig::resolve(command, base.overlay(args.settings), || rand::random::<u64>() >> 1)?;
    if drew {
        eprintln!("dperm: no seed given, using seed {}", cfg.seed);
    }
    log::info!("resolved config: {cfg:?}");
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (command, args) = match cli.command {
        Sub::Train(a) => (Command::Train, a),
        Sub::Ci(a) => (Command::Ci, a),
        Sub::Evaluate(a) => (Command::Evaluate, a),
        Sub::Synth(a) => (Command::Synth, a),
    };
    let cfg = resolve(command, args)?;
    match command {
        Command::Train => commands::train(&cfg),
        Command::Ci => commands::ci(&cfg),
        Command::Evaluate => commands::evaluate(&cfg),
        Command::Synth => commands::synth(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DPERM_LOG", "error")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dperm: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
