//! `obstacle`: solve, optimize and run experiments from a TOML config.
//!
//! Exit codes: 0 success, 1 invalid config or I/O failure, 2 solver or
//! optimizer non-convergence, 3 failed assertion.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{Method, Overrides, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "obstacle", version, about = "Obstacle-type variational inequality: solves, optimal control, experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; defaults are used when absent.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Seed for sampled experiments (overrides `experiment.seed`).
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Refinement levels for sweeps (overrides `experiment.levels`).
    #[arg(long, global = true, value_name = "N")]
    levels: Option<usize>,
    /// State solver (overrides `solver.method`).
    #[arg(long, global = true, value_enum)]
    solver: Option<Method>,
    /// Do not echo the log to stdout.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Solve the state inequality for the configured control.
    Solve,
    /// Minimize the cost over controls.
    Optimize,
    /// Run the experiment selected by `experiment.sweep`.
    Sweep,
    /// Sample the convex-combination ordering; always exits 0 on completion.
    Scan,
}

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_NOT_CONVERGED: u8 = 2;
pub const EXIT_ASSERTION: u8 = 3;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let ov = Overrides { out: cli.out, seed: cli.seed, levels: cli.levels, method: cli.solver };
    let cfg = match RunConfig::load(cli.config.as_deref(), &ov) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let code = match commands::run(cli.command, &cfg, cli.quiet) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    };
    ExitCode::from(code)
}
