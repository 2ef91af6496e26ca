//! Command-line front end: scenario loading, subcommands wiring the
//! library modules, CSV/JSON emission for plots and reports.
//!
//! Exit codes: 0 success (including structured warnings), 2 scenario or
//! schema problems, 3 instability, 4 numerical failure. Thread count is
//! controlled by `RAYON_NUM_THREADS`.

mod commands;

use clap::{Args, Parser, Subcommand};
use delay_lqr::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "delay-lqr",
    version,
    about = "Cost functionals, optimal control and bounds for linear time-delay systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct CommonArgs {
    /// Scenario JSON file driving the run
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory (created if missing)
    #[arg(long)]
    out: PathBuf,
    /// Override grid.dt (seconds; must divide the delay)
    #[arg(long)]
    dt: Option<f64>,
    /// Override grid.n_theta
    #[arg(long)]
    n_theta: Option<usize>,
    /// Override grid.horizon (seconds)
    #[arg(long)]
    horizon: Option<f64>,
    /// Override synthesis.tol
    #[arg(long)]
    tol: Option<f64>,
    /// Override synthesis.max_iter
    #[arg(long)]
    max_iter: Option<usize>,
    /// Replace the reference's jumps by ramps to the next plateau
    #[arg(long, default_value_t = false)]
    continuous_ref: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the closed loop and write the trajectory CSV
    Simulate(CommonArgs),
    /// Policy-iteration synthesis; writes the report and law/kernel dumps
    Synthesize(CommonArgs),
    /// Lyapunov-property, optimality-equation and V-vs-J checks
    Verify(CommonArgs),
    /// Quadratic upper bound and cubic lower-bound pipeline
    Bounds(CommonArgs),
    /// Temperature-plant tracking benchmark (optimal vs PI)
    Bench(CommonArgs),
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Schema(_)) | Some(Error::Dimension(_)) | Some(Error::Domain(_)) => 2,
        Some(Error::NotStable(_)) | Some(Error::Diverged { .. }) | Some(Error::Synthesis(_)) => 3,
        Some(Error::Numerical(_)) => 4,
        Some(Error::Io(_)) | None => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Synthesize(a) => commands::synthesize(&a),
        Command::Verify(a) => commands::verify(&a),
        Command::Bounds(a) => commands::bounds(&a),
        Command::Bench(a) => commands::bench(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

pub(crate) use CommonArgs as CommandArgs;
