//! Command-line pipeline: classify trades, calibrate the propagator model,
//! compute optimal schedules and frontiers, simulate synthetic markets, and
//! Monte-Carlo-check schedule costs.

mod commands;

use clap::{Parser, Subcommand};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "transient-exec",
    version,
    about = "Propagator-model calibration and optimal intraday execution",
    after_help = "Units: prices in currency, volumes in shares, impact/spread in basis \
                  points (bp), noise variance in bp^2 per interval, per-share costs in bp. \
                  Timestamps are integer microseconds from a per-day origin.\n\
                  Environment: TRANSIENT_EXEC_THREADS caps internal parallelism.\n\
                  Exit codes: 0 ok, 2 input/parse, 3 calibration, 4 model, 5 solver, 6 simulation."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Infer trade signs from the prevailing quote mid.
    Classify(commands::ClassifyArgs),
    /// Full calibration: classify, aggregate, fit impact, propagator, noise, spread.
    Calibrate(commands::CalibrateArgs),
    /// Optimal schedule for a calibrated model.
    Optimize(commands::OptimizeArgs),
    /// Mean-variance frontier plus the cosh baseline, costed under one model.
    Frontier(commands::FrontierArgs),
    /// Generate a synthetic interval series or trade/quote tape.
    Simulate(commands::SimulateArgs),
    /// Monte-Carlo cost distribution of a schedule vs the analytic values.
    CostMc(commands::CostMcArgs),
    /// Cost table for flat, oscillating, spread-aware, and cosh schedules.
    Compare(commands::CompareArgs),
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("TRANSIENT_EXEC_THREADS") {
        if let Ok(n) = threads.trim().parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
        }
    }
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Classify(args) => commands::classify(args),
        Command::Calibrate(args) => commands::calibrate(args),
        Command::Optimize(args) => commands::optimize(args),
        Command::Frontier(args) => commands::frontier(args),
        Command::Simulate(args) => commands::simulate(args),
        Command::CostMc(args) => commands::cost_mc(args),
        Command::Compare(args) => commands::compare(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(commands::exit_code(&err))
        }
    }
}
