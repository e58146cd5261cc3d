mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::commands::FitKind;
use crate::config::RunConfig;
use crate::error::CliResult;

/// Simulate, sample and analyse a Rydberg-superatom photonic qubit source.
#[derive(Debug, Parser)]
#[command(name = "pqsim", version)]
struct Cli {
    /// TOML run configuration; defaults are used when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Root seed for every random stream.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Efficiency budget, drive and flux profiles, and model quadrature statistics.
    Simulate,
    /// Synthetic homodyne dataset, SPD record, HBT estimate and Rydberg histogram.
    Sample,
    /// Maximum-likelihood reconstruction of a homodyne dataset.
    Tomo {
        /// Dataset directory (defaults to OUT/dataset).
        dataset: Option<PathBuf>,
        /// Detection efficiency used to correct the reconstruction.
        #[arg(long)]
        efficiency: Option<f64>,
    },
    /// Parameter fits on sampled data.
    Fit {
        #[arg(value_enum)]
        kind: FitArg,
        /// Input file (defaults to the matching file under OUT).
        #[arg(long, value_name = "PATH")]
        input: Option<PathBuf>,
        /// Detected efficiency for the dephasing fit.
        #[arg(long)]
        eta: Option<f64>,
    },
    /// Collect results into a summary and plot-ready tables.
    Report,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FitArg {
    Dephasing,
    Rydberg,
}

fn run(cli: Cli) -> CliResult<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = cli.out {
        config.output_dir = out;
    }
    match cli.command {
        Command::Simulate => commands::simulate(&config),
        Command::Sample => commands::sample(&config),
        Command::Tomo { dataset, efficiency } => commands::tomo(&config, dataset.as_deref(), efficiency),
        Command::Fit { kind, input, eta } => {
            let kind = match kind {
                FitArg::Dephasing => FitKind::Dephasing,
                FitArg::Rydberg => FitKind::Rydberg,
            };
            commands::fit(&config, kind, input.as_deref(), eta)
        }
        Command::Report => commands::report(&config),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
