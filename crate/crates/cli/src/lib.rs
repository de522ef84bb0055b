//! Command-line front end: `fit`, `simulate` and `density`.

pub mod density;
pub mod error;
pub mod lambda;
pub mod model;
pub mod output;
pub mod report;
pub mod simulate;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "pgmeta", version, about = "Penalized Gaussian mixture random-effects meta-analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model to a CSV of effects and write a report.
    Fit(report::FitArgs),
    /// Run simulation scenarios from a config file.
    Simulate(simulate::SimulateArgs),
    /// Write fitted density curves with pointwise confidence intervals.
    Density(density::DensityArgs),
}

pub fn run(cli: &Cli) -> error::CliResult<()> {
    match &cli.command {
        Command::Fit(a) => report::run(a),
        Command::Simulate(a) => simulate::run(a),
        Command::Density(a) => density::run(a),
    }
}
