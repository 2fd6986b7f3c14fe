use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use detcgd::report::PlotAxis;

mod commands;
mod config;

use config::{Experiment, ExperimentConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] detcgd::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use detcgd::Error::*;
        match self {
            CliError::Config(_) => 2,
            CliError::Core(Infeasible(_)) => 3,
            CliError::Core(Divergence { .. }) => 4,
            CliError::Core(Io(_)) => 1,
            CliError::Core(_) => 2,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "detcgd", version, about = "Compressed gradient descent with matrix stepsizes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Run this seed only.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Skip the stepsize condition checks.
    #[arg(long)]
    unsafe_stepsize: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Axis {
    Iteration,
    Coordinates,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute the stepsize and write its condition report.
    Calibrate(Common),
    /// Run the configured method for every seed.
    Run(Common),
    /// Evaluate the communication-complexity table for the problem's L.
    Table(Common),
    /// Run every method of the sweep section on shared seeds.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "iteration")]
        axis: Axis,
    },
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let (name, common) = match &cli.command {
        Command::Calibrate(c) => ("calibrate", c),
        Command::Run(c) => ("run", c),
        Command::Table(c) => ("table", c),
        Command::Sweep { common, .. } => ("sweep", common),
    };
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seeds = vec![s];
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    cfg.unsafe_stepsize |= common.unsafe_stepsize;
    let base = common.config.parent().map(PathBuf::from).unwrap_or_default();
    let exp = Experiment::build(&cfg, &base)?;
    std::fs::create_dir_all(&cfg.out).map_err(detcgd::Error::from)?;
    commands::write_metadata(&cfg.out, name, &common.config)?;
    log::info!("{name}: d = {}, n = {}, out = {}", exp.l().dim(), exp.fed.n(), cfg.out.display());
    match cli.command {
        Command::Calibrate(_) => commands::calibrate(&cfg, &exp, &cfg.out),
        Command::Run(_) => commands::run(&cfg, &exp, &cfg.out),
        Command::Table(_) => commands::table(&cfg, &exp, &cfg.out),
        Command::Sweep { axis, .. } => {
            let axis = match axis {
                Axis::Iteration => PlotAxis::Iteration,
                Axis::Coordinates => PlotAxis::Coordinates,
            };
            commands::sweep(&cfg, &exp, &cfg.out, axis)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
