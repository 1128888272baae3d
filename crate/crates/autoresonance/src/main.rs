use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use autoresonance::commands::{run, Command, RunOptions};

/// Simulation and verification toolkit for capture into parametric
/// autoresonance with dissipation.
#[derive(Parser)]
#[command(name = "autoresonance", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Integrate the averaged system (optionally perturbed) and write the
    /// trajectory CSV.
    Simulate(CommonArgs),
    /// Compute asymptotic series coefficients and their residual table.
    Asymptotics(CommonArgs),
    /// Certify the Lyapunov inequalities on a sampled domain.
    Certify(CommonArgs),
    /// Classify a grid of initial conditions as captured or bounded.
    Basin(CommonArgs),
    /// Estimate the escape probability under random perturbations.
    Montecarlo(CommonArgs),
    /// Compare the Duffing oscillator against its averaged model.
    Duffing(CommonArgs),
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Experiment configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (defaults to the config value or runs/<command>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of worker threads; results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Sub::Simulate(a) => (Command::Simulate, a),
        Sub::Asymptotics(a) => (Command::Asymptotics, a),
        Sub::Certify(a) => (Command::Certify, a),
        Sub::Basin(a) => (Command::Basin, a),
        Sub::Montecarlo(a) => (Command::Montecarlo, a),
        Sub::Duffing(a) => (Command::Duffing, a),
    };
    let opts = RunOptions {
        config_path: args.config,
        out_dir: args.out,
        seed: args.seed,
        workers: args.workers,
    };
    match run(command, &opts) {
        Ok(out) => {
            println!("{}: outputs written to {}", command.name(), out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}: {e}", command.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
