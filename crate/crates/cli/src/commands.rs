//! Subcommand implementations. Each produces a [`Table`] and a status.

use anyhow::{bail, Context, Result};
use rskelly::objective::{
    continuous_log_variance, continuous_logvar_second_derivative, discrete_logvar_second_derivative, evaluate_mc,
    log_variance_at,
};
use rskelly::{
    build_discrete_compound, certify, grid_refine, maximize, sweep_rho, AllocationVector, CompoundReturnDistribution,
    ContinuousUniformObjective, ErlangCompoundDensity, MonteCarloObjective, Objective, OptimizationResult, PayoffModel,
    QuadratureConfig, RiskSpec,
};

use crate::grid::UsageError;
use crate::scenario::Scenario;
use crate::table::{indexed, Cell, Table};

/// Refinement rounds used when `optimize` runs the grid search.
pub const GRID_LEVELS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// Output was written but a solve failed or did not converge.
    NumericalFailure,
    /// First-order conditions do not hold at the given allocation.
    KktViolated,
}

pub struct Output {
    pub table: Table,
    pub status: Status,
}

impl Output {
    fn ok(table: Table) -> Self {
        Self { table, status: Status::Ok }
    }
}

/// How the objective of a scenario is evaluated.
pub enum Evaluator {
    Exact(CompoundReturnDistribution),
    Quadrature(ContinuousUniformObjective),
    MonteCarlo(MonteCarloObjective),
}

impl Evaluator {
    /// Exact atoms for discrete and deterministic models, falling back to
    /// Monte Carlo when compounding would exceed the atom cap; quadrature for
    /// the uniform model.
    pub fn for_period(sc: &Scenario, n: u32) -> Result<Self> {
        match &sc.model {
            PayoffModel::ContinuousUniform { x_max } => {
                Ok(Evaluator::Quadrature(ContinuousUniformObjective::new(*x_max, n, QuadratureConfig::default())?))
            }
            model => match build_discrete_compound(model, n, sc.atom_cap) {
                Ok(dist) => Ok(Evaluator::Exact(dist)),
                Err(rskelly::Error::CapExceeded { needed, cap }) => {
                    eprintln!("note: {needed} compound atoms exceed the cap of {cap}; using Monte Carlo");
                    Ok(Evaluator::MonteCarlo(MonteCarloObjective::new(model.clone(), n, sc.mc)?))
                }
                Err(e) => Err(e.into()),
            },
        }
    }

    pub fn objective(&self) -> &dyn Objective {
        match self {
            Evaluator::Exact(d) => d,
            Evaluator::Quadrature(q) => q,
            Evaluator::MonteCarlo(m) => m,
        }
    }

    pub fn method(&self) -> &'static str {
        match self {
            Evaluator::Exact(_) => "exact",
            Evaluator::Quadrature(_) => "quadrature",
            Evaluator::MonteCarlo(_) => "monte_carlo",
        }
    }
}

fn allocation(values: &[f64], m: usize) -> Result<AllocationVector> {
    if values.len() != m {
        bail!(UsageError(format!("--k has {} components, the model has {m} alternatives", values.len())));
    }
    AllocationVector::new(values.to_vec()).map_err(|e| UsageError(format!("--k: {e}")).into())
}

fn nums(values: &[f64]) -> impl Iterator<Item = Cell> + '_ {
    values.iter().map(|x| Cell::Num(*x))
}

pub fn evaluate(sc: &Scenario, k: &[f64], rhos: &[f64]) -> Result<Output> {
    let m = sc.model.m();
    let k = allocation(k, m)?;
    let ev = Evaluator::for_period(sc, sc.spec.n)?;
    let mut header = vec!["method".to_string(), "rho".into(), "n".into()];
    header.extend(indexed("k", m));
    header.extend(["u", "mean_log", "var_log", "stderr"].map(String::from));
    let mut table = Table::new(header);
    for &rho in rhos {
        let spec = sc.spec.with_rho(rho).map_err(|e| UsageError(e.to_string()))?;
        let (value, stderr) = match &ev {
            Evaluator::MonteCarlo(_) => evaluate_mc(&sc.model, &k, &spec, &sc.mc)?,
            other => (other.objective().value(&k, &spec)?, 0.0),
        };
        let mut row = vec![Cell::Text(ev.method().into()), Cell::Num(rho), Cell::Int(spec.n.into())];
        row.extend(nums(k.as_slice()));
        row.extend(nums(&[value.u, value.mean_log, value.var_log, stderr]));
        table.push(row);
    }
    Ok(Output::ok(table))
}

fn result_header(m: usize) -> Vec<String> {
    let mut header = vec!["method".to_string(), "rho".into(), "n".into()];
    header.extend(indexed("k", m));
    header.extend(
        ["u", "mean_log", "var_log", "iterations", "converged", "termination", "kkt_max_violation"].map(String::from),
    );
    header
}

fn result_row(method: &str, spec: &RiskSpec, r: &OptimizationResult) -> Vec<Cell> {
    let mut row = vec![Cell::Text(method.into()), Cell::Num(spec.rho), Cell::Int(spec.n.into())];
    row.extend(nums(r.k_star.as_slice()));
    row.extend(nums(&[r.value.u, r.value.mean_log, r.value.var_log]));
    row.push(Cell::Int(r.iterations as u64));
    row.push(Cell::Bool(r.converged));
    row.push(Cell::Text(format!("{:?}", r.termination)));
    row.push(Cell::Num(r.kkt.max_violation));
    row
}

pub fn optimize(sc: &Scenario, grid_points: Option<usize>) -> Result<Output> {
    let ev = Evaluator::for_period(sc, sc.spec.n)?;
    let (method, result) = match grid_points {
        Some(points) => ("grid", grid_refine(ev.objective(), &sc.spec, GRID_LEVELS, points)?),
        None => (ev.method(), maximize(ev.objective(), &sc.spec, &sc.solver, None)?),
    };
    let mut table = Table::new(result_header(sc.model.m()));
    table.push(result_row(method, &sc.spec, &result));
    let status = if result.converged { Status::Ok } else { Status::NumericalFailure };
    Ok(Output { table, status })
}

pub fn kkt_check(sc: &Scenario, k: &[f64], tol: f64) -> Result<Output> {
    if !(tol > 0.0) {
        bail!(UsageError(format!("--tol must be > 0, got {tol}")));
    }
    let k = allocation(k, sc.model.m())?;
    let ev = Evaluator::for_period(sc, sc.spec.n)?;
    let report = certify(ev.objective(), &k, &sc.spec, tol)?;
    let mut table = Table::new(["alternative", "k", "residual", "active", "multiplier", "satisfied"]);
    for (i, (g, active)) in report.residuals.iter().zip(&report.active).enumerate() {
        let margin = if *active { (g - 1.0).abs() } else { g - 1.0 };
        table.push(vec![
            Cell::Int(i as u64 + 1),
            Cell::Num(k[i]),
            Cell::Num(*g),
            Cell::Bool(*active),
            Cell::Num(1.0 - g),
            Cell::Bool(margin <= tol),
        ]);
    }
    if !report.satisfied {
        eprintln!("first-order conditions violated: max violation {:e} > tol {tol:e}", report.max_violation);
    }
    let status = if report.satisfied { Status::Ok } else { Status::KktViolated };
    Ok(Output { table, status })
}

pub fn sweep(sc: &Scenario, rhos: &[f64]) -> Result<Output> {
    let ev = Evaluator::for_period(sc, sc.spec.n)?;
    let rows = sweep_rho(ev.objective(), &sc.spec, rhos, &sc.solver)?;
    let m = sc.model.m();
    let mut header = result_header(m);
    header.push("error".into());
    let mut table = Table::new(header);
    let mut status = Status::Ok;
    for row in rows {
        match row.result {
            Ok(r) => {
                let spec = RiskSpec { rho: row.rho, ..sc.spec };
                if !r.converged {
                    status = Status::NumericalFailure;
                }
                let mut cells = result_row(ev.method(), &spec, &r);
                cells.push(Cell::Empty);
                table.push(cells);
            }
            Err(e) => {
                status = Status::NumericalFailure;
                let mut cells = vec![Cell::Text(ev.method().into()), Cell::Num(row.rho), Cell::Int(sc.spec.n.into())];
                cells.extend(std::iter::repeat_n(Cell::Empty, m + 7));
                cells.push(Cell::Text(e.to_string()));
                table.push(cells);
            }
        }
    }
    Ok(Output { table, status })
}

fn uniform_x_max(sc: &Scenario, command: &str) -> Result<f64> {
    match sc.model {
        PayoffModel::ContinuousUniform { x_max } => Ok(x_max),
        _ => bail!(UsageError(format!("{command} needs a continuous_uniform scenario"))),
    }
}

/// Density and CDF of the compound payoff at `z` values, or at `points`
/// evenly spaced cell midpoints of the support when `z` is `None`.
pub fn density(sc: &Scenario, n_values: &[u32], z: Option<&[f64]>, points: usize) -> Result<Output> {
    let x_max = uniform_x_max(sc, "density")?;
    if points == 0 {
        bail!(UsageError("--grid-points must be >= 1".into()));
    }
    let mut table = Table::new(["n", "z", "pdf", "cdf"]);
    for &n in n_values {
        let d = ErlangCompoundDensity::new(n, x_max).map_err(|e| UsageError(e.to_string()))?;
        let (lo, hi) = d.support();
        let zs: Vec<f64> = match z {
            Some(z) => z.to_vec(),
            None => (0..points).map(|i| lo + (hi - lo) * (i as f64 + 0.5) / points as f64).collect(),
        };
        for z in zs {
            table.push(vec![Cell::Int(n.into()), Cell::Num(z), Cell::Num(d.pdf(z)), Cell::Num(d.cdf(z))]);
        }
    }
    Ok(Output::ok(table))
}

/// Log-variance along `K = (1 - k2, k2)` and its second derivative in `k2`.
pub fn convexity(sc: &Scenario, n_values: &[u32], k2_values: &[f64]) -> Result<Output> {
    if sc.model.m() != 2 {
        bail!(UsageError(format!("convexity needs two alternatives, the model has {}", sc.model.m())));
    }
    if let Some(k2) = k2_values.iter().find(|k2| !(0.0..1.0).contains(*k2)) {
        bail!(UsageError(format!("k2 values must lie in [0, 1), got {k2}")));
    }
    let quad = QuadratureConfig::default();
    let mut table = Table::new(["n", "k2", "log_variance", "d2_log_variance"]);
    for &n in n_values {
        let ev = Evaluator::for_period(sc, n)?;
        for &k2 in k2_values {
            let (v, d2) = match &ev {
                Evaluator::Quadrature(q) => (
                    continuous_log_variance(q.x_max(), n, k2, &quad)?,
                    continuous_logvar_second_derivative(q.x_max(), n, k2, &quad)?,
                ),
                Evaluator::Exact(d) => {
                    (log_variance_at(d, &[1.0 - k2, k2])?, discrete_logvar_second_derivative(d, k2)?)
                }
                Evaluator::MonteCarlo(_) => {
                    bail!(UsageError("convexity needs exact or quadrature evaluation; raise atom_cap".into()))
                }
            };
            table.push(vec![Cell::Int(n.into()), Cell::Num(k2), Cell::Num(v), Cell::Num(d2)]);
        }
    }
    Ok(Output::ok(table))
}

/// Renders the table to `path`, or to standard output.
pub fn write_table(table: &Table, path: Option<&std::path::Path>) -> Result<()> {
    match path {
        Some(p) => {
            let file = std::fs::File::create(p).with_context(|| format!("cannot create {}", p.display()))?;
            table.write_csv(std::io::BufWriter::new(file)).with_context(|| format!("cannot write {}", p.display()))
        }
        None => table.write_csv(std::io::stdout().lock()).context("cannot write to standard output"),
    }
}
