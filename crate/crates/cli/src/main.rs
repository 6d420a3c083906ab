mod common;
mod config;
mod effects;
mod experiment;
mod fit;
mod simulate;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Stochastic direct and indirect effects of a time-to-event mediator under
/// semi-competing risks.
#[derive(Parser)]
#[command(name = "msm-mediate", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one dataset from a scenario file.
    Simulate(simulate::SimulateArgs),
    /// Fit the three transition models and report coefficients.
    Fit(fit::FitArgs),
    /// Estimate effect curves, with optional bootstrap bands.
    Effects(effects::EffectsArgs),
    /// Run the Monte Carlo comparison of the estimation methods.
    Experiment(experiment::ExperimentArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate::run(a),
        Command::Fit(a) => fit::run(a),
        Command::Effects(a) => effects::run(a),
        Command::Experiment(a) => experiment::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
