//! Scenario files: a JSON document describing the payoff model, the risk
//! specification and optional solver and Monte Carlo settings.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "labels": { "name": "even-odds bet" },
//!   "model": {
//!     "kind": "discrete_joint",
//!     "atoms": [
//!       { "payoffs": [0.0, 0.5], "prob": 0.6 },
//!       { "payoffs": [0.0, -0.5], "prob": 0.4 }
//!     ]
//!   },
//!   "risk": { "rho": 0.0, "n": 1 },
//!   "solver": { "restarts": 5 },
//!   "mc": { "seed": 7, "samples": 1000000 },
//!   "atom_cap": 100000
//! }
//! ```
//!
//! Model kinds are `discrete_joint` (`atoms`), `continuous_uniform`
//! (`x_max`) and `deterministic` (`rate`, `m`). Unknown keys are rejected.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rskelly::{McConfig, OptimizerOptions, PayoffAtom, PayoffModel, RiskSpec, DEFAULT_ATOM_CAP};
use serde::Deserialize;
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },

    #[error("parse error at line {line}, column {column} (field `{field}`): {message}")]
    Parse { line: usize, column: usize, field: String, message: String },

    #[error("validation failed [{invariant}]: {message}")]
    Validation { invariant: String, message: String },
}

impl ScenarioError {
    fn validation(invariant: &str, message: impl fmt::Display) -> Self {
        ScenarioError::Validation { invariant: invariant.to_string(), message: message.to_string() }
    }

    /// Library errors carry the invariant name as a `name: detail` prefix.
    fn from_library(err: rskelly::Error) -> Self {
        let text = match &err {
            rskelly::Error::InvalidModel(m) | rskelly::Error::InvalidRiskSpec(m) => m.clone(),
            other => other.to_string(),
        };
        match text.split_once(": ") {
            Some((name, detail)) if !name.contains(' ') => Self::validation(name, detail),
            _ => Self::validation("model", text),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    schema_version: u32,
    #[serde(default)]
    labels: BTreeMap<String, String>,
    model: ModelFile,
    risk: RiskFile,
    #[serde(default)]
    solver: SolverFile,
    mc: Option<McFile>,
    atom_cap: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum ModelFile {
    DiscreteJoint { atoms: Vec<AtomFile> },
    ContinuousUniform { x_max: f64 },
    Deterministic { rate: f64, m: usize },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AtomFile {
    payoffs: Vec<f64>,
    prob: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RiskFile {
    rho: f64,
    n: u32,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolverFile {
    max_iters: Option<usize>,
    step_init: Option<f64>,
    backtrack: Option<f64>,
    grad_tol: Option<f64>,
    kkt_tol: Option<f64>,
    restarts: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct McFile {
    seed: Option<u64>,
    samples: Option<u64>,
    batch: Option<u64>,
}

/// A validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub labels: BTreeMap<String, String>,
    pub model: PayoffModel,
    pub spec: RiskSpec,
    pub solver: OptimizerOptions,
    /// Monte Carlo settings; defaults apply when the file has none.
    pub mc: McConfig,
    pub atom_cap: usize,
}

impl Scenario {
    /// Replaces the solver and Monte Carlo seeds.
    pub fn reseed(&mut self, seed: u64) {
        self.solver.seed = seed;
        self.mc.seed = seed;
    }
}

pub fn parse_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
    parse_scenario_str(&text)
}

pub fn parse_scenario_str(text: &str) -> Result<Scenario, ScenarioError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: ScenarioFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        ScenarioError::Parse { line: inner.line(), column: inner.column(), field, message: inner.to_string() }
    })?;
    validate(file)
}

fn validate(file: ScenarioFile) -> Result<Scenario, ScenarioError> {
    if file.schema_version != SCHEMA_VERSION {
        return Err(ScenarioError::validation(
            "schema-version",
            format!("unsupported schema_version {}, expected {SCHEMA_VERSION}", file.schema_version),
        ));
    }
    let model = match file.model {
        ModelFile::DiscreteJoint { atoms } => PayoffModel::DiscreteJoint {
            atoms: atoms.into_iter().map(|a| PayoffAtom::new(a.payoffs, a.prob)).collect(),
        },
        ModelFile::ContinuousUniform { x_max } => PayoffModel::ContinuousUniform { x_max },
        ModelFile::Deterministic { rate, m } => PayoffModel::Deterministic { rate, m },
    };
    model.validate().map_err(ScenarioError::from_library)?;
    let spec = RiskSpec::new(file.risk.rho, file.risk.n).map_err(ScenarioError::from_library)?;

    let defaults = OptimizerOptions::default();
    let s = file.solver;
    let solver = OptimizerOptions {
        max_iters: s.max_iters.unwrap_or(defaults.max_iters),
        step_init: s.step_init.unwrap_or(defaults.step_init),
        backtrack: s.backtrack.unwrap_or(defaults.backtrack),
        grad_tol: s.grad_tol.unwrap_or(defaults.grad_tol),
        kkt_tol: s.kkt_tol.unwrap_or(defaults.kkt_tol),
        restarts: s.restarts.unwrap_or(defaults.restarts),
        seed: s.seed.unwrap_or(defaults.seed),
        record_trace: false,
    };
    solver.validate().map_err(|e| ScenarioError::validation("solver-options", e))?;

    let mc_defaults = McConfig::default();
    let mc = match file.mc {
        Some(m) => McConfig {
            seed: m.seed.unwrap_or(mc_defaults.seed),
            samples: m.samples.unwrap_or(mc_defaults.samples),
            batch: m.batch.unwrap_or(mc_defaults.batch),
        },
        None => mc_defaults,
    };
    mc.validate().map_err(|e| ScenarioError::validation("mc-config", e))?;

    let atom_cap = file.atom_cap.unwrap_or(DEFAULT_ATOM_CAP);
    if atom_cap == 0 {
        return Err(ScenarioError::validation("atom-cap-positive", "atom_cap must be >= 1"));
    }
    Ok(Scenario { labels: file.labels, model, spec, solver, mc, atom_cap })
}
