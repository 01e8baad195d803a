//! `battctl`: solve battery-storage dispatch policies under fluctuating
//! prices, verify their threshold structure and run savings experiments.

mod artifacts;
mod commands;
mod config;
mod data;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use commands::VerificationFailed;
use config::Overrides;

#[derive(Parser)]
#[command(
    name = "battctl",
    about = "Optimal battery storage control under dynamic electricity prices",
    version
)]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true, default_value = "config.json")]
    config: PathBuf,

    /// Directory all artifacts are written to (created if missing).
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    /// Worker thread cap; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Override the config's discount factor.
    #[arg(long, global = true)]
    alpha: Option<f64>,

    /// Override the config's battery capacity, kWh.
    #[arg(long, global = true)]
    b_max: Option<f64>,

    /// Override the config's random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the config's solver tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the configured model; write value function, policy and
    /// thresholds.
    Solve,
    /// Replay solved thresholds against the evaluation window.
    Simulate {
        /// Solve first instead of loading thresholds from the output dir.
        #[arg(long)]
        solve_inline: bool,
        /// Include the battery trajectory in run_result.json.
        #[arg(long)]
        trajectories: bool,
    },
    /// Re-solve and replay across the configured battery sizes.
    Sweep,
    /// Compare individual against shared storage for the configured user
    /// counts.
    Pool,
    /// Run the structural checks against stored artifacts.
    Verify,
    /// Generate the configured synthetic traces as CSV files.
    Synth,
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()?;
    }
    let overrides = Overrides {
        alpha: cli.alpha,
        b_max: cli.b_max,
        seed: cli.seed,
        tol: cli.tol,
    };
    let config = config::load(&cli.config, &overrides)?;
    std::fs::create_dir_all(&cli.out_dir)?;
    match &cli.command {
        Command::Solve => commands::cmd_solve(&config, &cli.out_dir),
        Command::Simulate {
            solve_inline,
            trajectories,
        } => commands::cmd_simulate(&config, &cli.out_dir, *solve_inline, *trajectories),
        Command::Sweep => commands::cmd_sweep(&config, &cli.out_dir),
        Command::Pool => commands::cmd_pool(&config, &cli.out_dir),
        Command::Verify => commands::cmd_verify(&config, &cli.out_dir),
        Command::Synth => commands::cmd_synth(&config, &cli.out_dir),
    }
}

/// Exit codes: 0 success, 2 configuration/validation, 3 solver
/// non-convergence, 4 verification failure.
fn classify(error: &anyhow::Error) -> u8 {
    if error.is::<VerificationFailed>() {
        return 4;
    }
    if let Some(core) = error.downcast_ref::<battctl_core::Error>() {
        if matches!(core, battctl_core::Error::NonConvergence { .. }) {
            return 3;
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error:#}");
            ExitCode::from(classify(&error))
        }
    }
}
