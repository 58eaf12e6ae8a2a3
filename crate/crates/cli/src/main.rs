//! `rskelly`: evaluate, optimize and certify risk-sensitive allocations
//! described by a scenario file. Results are written as CSV.
//!
//! Exit codes: 0 success, 1 invalid input (command line or scenario),
//! 2 numerical failure, 3 first-order conditions violated (`kkt-check`).

// `!(x > 0.0)` style checks deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod grid;
mod scenario;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::{Output, Status};
use grid::{parse_list, parse_range, UsageError};
use scenario::{parse_scenario, Scenario, ScenarioError};

#[derive(Debug, Parser)]
#[command(name = "rskelly", version, about = "Risk-sensitive log-growth allocation on the unit simplex")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Write the table here instead of standard output.
    #[arg(long, global = true)]
    output: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,

    /// Seed for solver restarts and Monte Carlo sampling (overrides the scenario).
    #[arg(long, global = true, env = "RSKELLY_SEED")]
    seed: Option<u64>,

    /// Worker threads for parallel evaluation.
    #[arg(long, global = true, env = "RSKELLY_THREADS")]
    threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Csv,
}

#[derive(Debug, Args)]
struct ScenarioArg {
    /// Scenario file (JSON).
    scenario: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Objective value, mean log-growth and log-variance at an allocation.
    Evaluate {
        #[command(flatten)]
        file: ScenarioArg,
        /// Allocation, e.g. "0.6,0.4".
        #[arg(long)]
        k: String,
        /// Risk-aversion values a:b:step (defaults to the scenario's rho).
        #[arg(long)]
        rho_grid: Option<String>,
    },
    /// Maximize the objective for the scenario's rho.
    Optimize {
        #[command(flatten)]
        file: ScenarioArg,
        /// Use the refined grid search with this many divisions per level.
        #[arg(long)]
        grid_points: Option<usize>,
    },
    /// Check the first-order conditions at an allocation (exit 3 if violated).
    KktCheck {
        #[command(flatten)]
        file: ScenarioArg,
        #[arg(long)]
        k: String,
        /// Tolerance (defaults to the scenario's kkt_tol).
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Optimal allocation over a grid of risk-aversion values.
    Sweep {
        #[command(flatten)]
        file: ScenarioArg,
        #[arg(long, default_value = "0:1:0.1")]
        rho_grid: String,
    },
    /// Density and CDF of the compounded uniform payoff.
    Density {
        #[command(flatten)]
        file: ScenarioArg,
        /// Decision periods, e.g. "1,5,10" (defaults to the scenario's n).
        #[arg(long)]
        n_values: Option<String>,
        /// Payoff values a:b:step (defaults to midpoints across the support).
        #[arg(long)]
        z_grid: Option<String>,
        #[arg(long, default_value_t = 100)]
        grid_points: usize,
    },
    /// Log-variance and its curvature along the risky weight.
    Convexity {
        #[command(flatten)]
        file: ScenarioArg,
        #[arg(long)]
        n_values: Option<String>,
        #[arg(long, default_value = "0.02:0.98:0.02")]
        k2_grid: String,
    },
}

impl Command {
    fn scenario_path(&self) -> &PathBuf {
        match self {
            Command::Evaluate { file, .. }
            | Command::Optimize { file, .. }
            | Command::KktCheck { file, .. }
            | Command::Sweep { file, .. }
            | Command::Density { file, .. }
            | Command::Convexity { file, .. } => &file.scenario,
        }
    }
}

fn n_values(text: Option<&str>, sc: &Scenario) -> Result<Vec<u32>> {
    match text {
        Some(t) => {
            let values: Vec<u32> = parse_list(t, "n values")?;
            if values.contains(&0) {
                anyhow::bail!(UsageError("n values must be >= 1".into()));
            }
            Ok(values)
        }
        None => Ok(vec![sc.spec.n]),
    }
}

fn run(cli: &Cli) -> Result<Status> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            anyhow::bail!(UsageError("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().context("cannot start worker threads")?;
    }
    let Format::Csv = cli.format;
    let path = cli.command.scenario_path();
    let mut sc = parse_scenario(path).with_context(|| format!("scenario {}", path.display()))?;
    if let Some(seed) = cli.seed {
        sc.reseed(seed);
    }

    let Output { table, status } = match &cli.command {
        Command::Evaluate { k, rho_grid, .. } => {
            let rhos = match rho_grid {
                Some(g) => parse_range(g)?,
                None => vec![sc.spec.rho],
            };
            commands::evaluate(&sc, &parse_list(k, "allocation")?, &rhos)?
        }
        Command::Optimize { grid_points, .. } => commands::optimize(&sc, *grid_points)?,
        Command::KktCheck { k, tol, .. } => {
            commands::kkt_check(&sc, &parse_list(k, "allocation")?, tol.unwrap_or(sc.solver.kkt_tol))?
        }
        Command::Sweep { rho_grid, .. } => commands::sweep(&sc, &parse_range(rho_grid)?)?,
        Command::Density { n_values: n, z_grid, grid_points, .. } => {
            let z = z_grid.as_deref().map(parse_range).transpose()?;
            commands::density(&sc, &n_values(n.as_deref(), &sc)?, z.as_deref(), *grid_points)?
        }
        Command::Convexity { n_values: n, k2_grid, .. } => {
            commands::convexity(&sc, &n_values(n.as_deref(), &sc)?, &parse_range(k2_grid)?)?
        }
    };
    commands::write_table(&table, cli.output.as_deref())?;
    Ok(status)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let input = err.chain().any(|e| e.is::<ScenarioError>() || e.is::<UsageError>());
    if input {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::NumericalFailure) => {
            eprintln!("error: at least one solve failed or did not converge");
            ExitCode::from(2)
        }
        Ok(Status::KktViolated) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
