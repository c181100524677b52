//! `lierate` command-line driver.

mod commands;
mod config;
mod error;
mod report;
mod svg;

use clap::{Parser, Subcommand};
use config::{Overrides, RunConfig};
use error::{AppError, AppResult};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "lierate", version, about = "Rating-transition SDE: calibration, simulation, SSA and XVA")]
struct Cli {
    /// Run configuration (TOML with dotted keys); built-in defaults otherwise.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; affects speed only.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Repair the cohort matrix and write distance/adjusted/uncertainty matrices.
    Reconstruct,
    /// Fit the SDE coefficients to the reconstructed matrix.
    CalibrateHist,
    /// Fit a change of measure to default-probability targets.
    CalibrateRn,
    /// Simulate matrix trajectories, moments, property diagnostics and plots.
    Simulate,
    /// Nested SSA: occupancy error, pre-default distribution and plots.
    Ssa,
    /// CVA/DVA/BVA under the configured collateral regimes.
    Xva,
    /// Summarize a run directory into report.txt.
    Report {
        /// Run directory (defaults to the output directory).
        dir: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> AppResult<PathBuf> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(AppError::validation("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| AppError::validation(format!("thread pool: {e}")))?;
    }
    let ov = Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
    };
    if let Command::Report { dir } = &cli.command {
        // reporting reads artifacts only; no seed or inputs needed
        let dir = match (dir, &cli.out) {
            (Some(d), _) | (None, Some(d)) => d.clone(),
            (None, None) => config::output_dir(cli.config.as_deref())?,
        };
        let text = report::build_report(&dir)?;
        let path = dir.join("report.txt");
        std::fs::write(&path, text).map_err(|e| AppError::io(&path, e))?;
        return Ok(path);
    }
    let cfg = RunConfig::load(cli.config.as_deref(), &ov)?;
    match cli.command {
        Command::Reconstruct => commands::reconstruct_cmd(&cfg),
        Command::CalibrateHist => commands::calibrate_hist_cmd(&cfg),
        Command::CalibrateRn => commands::calibrate_rn_cmd(&cfg),
        Command::Simulate => commands::simulate_cmd(&cfg),
        Command::Ssa => commands::ssa_cmd(&cfg),
        Command::Xva => commands::xva_cmd(&cfg),
        Command::Report { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // usage errors are validation failures; help and version succeed
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(error::Kind::Validation.exit_code())
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(path) => {
            println!("{}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.kind.exit_code())
        }
    }
}
