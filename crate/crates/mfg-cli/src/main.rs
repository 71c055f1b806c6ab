use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use mfg_cli::{run_command, CommandKind};

/// Experiment runner for the finite-state ergodic mean field game laboratory.
#[derive(Parser)]
#[command(name = "mfg", version, about)]
struct Cli {
    /// Path to the JSON experiment config.
    #[arg(long, global = true, default_value = "config.json")]
    config: PathBuf,
    /// Output directory for artifacts (created if missing).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides any seed declared in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the stationary system (closed form or damped fixed point).
    SolveStationary,
    /// Train the master-equation potential network.
    TrainDgm,
    /// Run the n-player jump simulator and estimate realized costs.
    Simulate,
    /// Exact birth-death comparison of stationary vs network strategies.
    Compare,
    /// Tabulate the d = 2 good rate function.
    RateFunction,
    /// Propagation-of-chaos error over a range of player counts.
    Chaos,
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run() -> Result<ExitCode> {
    let cli = Cli::parse();
    let kind = match cli.command {
        Command::SolveStationary => CommandKind::SolveStationary,
        Command::TrainDgm => CommandKind::TrainDgm,
        Command::Simulate => CommandKind::Simulate,
        Command::Compare => CommandKind::Compare,
        Command::RateFunction => CommandKind::RateFunction,
        Command::Chaos => CommandKind::Chaos,
    };
    let config_text = std::fs::read_to_string(&cli.config)
        .with_context(|| format!("reading config {}", cli.config.display()))?;
    let outcome = run_command(kind, &config_text, &cli.out, cli.seed)?;
    if outcome.pass {
        Ok(ExitCode::SUCCESS)
    } else {
        for v in &outcome.violations {
            eprintln!("violation: {v}");
        }
        Ok(ExitCode::FAILURE)
    }
}
