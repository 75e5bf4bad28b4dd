use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod failure;

use failure::Failure;

#[derive(Parser)]
#[command(name = "qobs", version, about = "Observability analysis and state reconstruction for controlled quantum systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Scenario JSON file.
    pub scenario: PathBuf,
    /// Relative tolerance of the effective-observable series.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Quadrature nodes.
    #[arg(long)]
    pub nodes: Option<usize>,
    /// Largest number of measurement steps analysed.
    #[arg(long)]
    pub kmax: Option<usize>,
    /// Seed for randomized procedures.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Lie algebra and observability-space ranks.
    Analyze(Common),
    /// Effective observable of the measurement.
    Seff(Common),
    /// Disturbance, worst-case state and least disturbing probe.
    Disturbance(Common),
    /// Initial state from an output record.
    Reconstruct(commands::ReconstructArgs),
    /// Run the asymptotic observer.
    Observe(commands::ObserveArgs),
    /// Evolve and measure, writing the trajectory.
    Simulate(commands::SimulateArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Analyze(c) => commands::analyze(c),
        Command::Seff(c) => commands::seff(c),
        Command::Disturbance(c) => commands::disturbance(c),
        Command::Reconstruct(a) => commands::reconstruct(a),
        Command::Observe(a) => commands::observe(a),
        Command::Simulate(a) => commands::simulate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error[{}]: {}", f.code(), f);
            ExitCode::from(f.exit_code())
        }
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Validation { .. } => 2,
            Failure::Numerical { .. } => 3,
            Failure::Io { .. } => 4,
        }
    }
}
