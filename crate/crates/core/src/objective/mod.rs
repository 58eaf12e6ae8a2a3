//! The risk-sensitive objective, its log-variance term and its gradient.
//!
//! Every evaluator reduces to the same four expectations of the growth
//! ratio `W = <K, R_n>` and its log `L`, collected in [`LogMoments`]:
//! `E[L]`, `E[L^2]`, `E[R_i / W]` and `E[L R_i / W]`. Value, gradient and
//! first-order residuals are then closed-form in those moments.

mod continuous;
mod monte_carlo;

pub use continuous::{
    continuous_log_variance, continuous_logvar_second_derivative, continuous_moments, evaluate_continuous,
    ContinuousUniformObjective,
};
pub use monte_carlo::{evaluate_mc, McConfig, McStats, MonteCarloObjective};

use crate::error::{Error, Result};
use crate::payoff::CompoundReturnDistribution;

const SIMPLEX_NEG_TOL: f64 = 1e-12;
const SIMPLEX_SUM_TOL: f64 = 1e-10;
const VAR_CLAMP: f64 = 1e-12;

/// Central-difference step used by gradient checks.
pub const GRADIENT_FD_STEP: f64 = 1e-6;
/// Central-difference step used by log-variance curvature probes.
pub const LOGVAR_FD_STEP: f64 = 1e-4;

/// Feedback gain: the fraction of value held in each alternative.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationVector(Vec<f64>);

impl AllocationVector {
    pub fn new(k: Vec<f64>) -> Result<Self> {
        if k.is_empty() {
            return Err(Error::InvalidAllocation("allocation must be non-empty".into()));
        }
        if let Some(x) = k.iter().find(|x| !x.is_finite() || **x < -SIMPLEX_NEG_TOL) {
            return Err(Error::InvalidAllocation(format!("component {x} is negative or not finite")));
        }
        let sum: f64 = k.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_SUM_TOL {
            return Err(Error::InvalidAllocation(format!("components sum to {sum}, expected 1")));
        }
        Ok(Self(k))
    }

    /// Barycentre of the simplex.
    pub fn uniform(m: usize) -> Self {
        Self(vec![1.0 / m as f64; m])
    }

    pub fn vertex(m: usize, i: usize) -> Self {
        let mut k = vec![0.0; m];
        k[i] = 1.0;
        Self(k)
    }

    /// `(1 - k2, k2)` for two-alternative models.
    pub fn two_asset(k2: f64) -> Result<Self> {
        Self::new(vec![1.0 - k2, k2])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for AllocationVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Risk-aversion constant and decision period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskSpec {
    pub rho: f64,
    pub n: u32,
}

impl RiskSpec {
    pub fn new(rho: f64, n: u32) -> Result<Self> {
        if !(rho.is_finite() && rho >= 0.0) {
            return Err(Error::InvalidRiskSpec(format!("rho-nonnegative: rho must be >= 0, got {rho}")));
        }
        if n == 0 {
            return Err(Error::InvalidRiskSpec("period-positive: decision period n must be >= 1".into()));
        }
        Ok(Self { rho, n })
    }

    pub fn with_rho(self, rho: f64) -> Result<Self> {
        Self::new(rho, self.n)
    }

    /// Weight `rho / (2 n^2)` on the log-variance.
    pub fn variance_weight(&self) -> f64 {
        self.rho / (2.0 * (self.n as f64).powi(2))
    }
}

/// Objective value `u = mean_log - rho/(2n^2) * var_log`, with
/// `mean_log = E[L]/n` the per-stage expected log-growth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValue {
    pub u: f64,
    pub mean_log: f64,
    pub var_log: f64,
}

impl ObjectiveValue {
    pub fn assemble(expected_log: f64, var_log: f64, spec: &RiskSpec) -> Self {
        let mean_log = expected_log / spec.n as f64;
        Self { u: mean_log - spec.variance_weight() * var_log, mean_log, var_log }
    }
}

fn clamp_variance(v: f64) -> f64 {
    if v < 0.0 && v > -VAR_CLAMP {
        0.0
    } else {
        v
    }
}

/// Expectations of the growth ratio `W = <K, R_n>` and `L = log W`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMoments {
    /// `E[L]`
    pub e_log: f64,
    /// `E[L^2]`
    pub e_log_sq: f64,
    /// `E[R_i / W]`; empty when not requested.
    pub ratio: Vec<f64>,
    /// `E[L * R_i / W]`; empty when not requested.
    pub log_ratio: Vec<f64>,
}

impl LogMoments {
    /// `E[L^2] - E[L]^2`, with round-off negatives clamped to zero.
    pub fn var_log(&self) -> f64 {
        clamp_variance(self.e_log_sq - self.e_log * self.e_log)
    }

    pub fn objective(&self, spec: &RiskSpec) -> ObjectiveValue {
        ObjectiveValue::assemble(self.e_log, self.var_log(), spec)
    }

    /// Partial derivatives of `u` in each `K_i`, ignoring the simplex.
    pub fn gradient(&self, spec: &RiskSpec) -> Vec<f64> {
        let n = spec.n as f64;
        let rho = spec.rho;
        self.ratio
            .iter()
            .zip(&self.log_ratio)
            .map(|(a, b)| a / n * (1.0 + rho / n * self.e_log) - rho / (n * n) * b)
            .collect()
    }

    /// First-order residuals
    /// `g_i = E[R_i/W] - (rho/n) E[L R_i/W] + (rho/n) E[L] E[R_i/W]`.
    /// At an optimum `g_i = 1` where `K_i > 0` and `g_i <= 1` where `K_i = 0`.
    pub fn kkt_residuals(&self, spec: &RiskSpec) -> Vec<f64> {
        let c = spec.rho / spec.n as f64;
        self.ratio.iter().zip(&self.log_ratio).map(|(a, b)| a - c * b + c * self.e_log * a).collect()
    }
}

/// A model whose growth-ratio moments can be evaluated at any allocation.
pub trait Objective: Sync {
    /// Number of alternatives.
    fn dim(&self) -> usize;

    /// Decision period the model is compounded over.
    fn stages(&self) -> u32;

    /// Moments at `k`. Ratio moments are filled only when `with_ratios`.
    fn moments_at(&self, k: &AllocationVector, with_ratios: bool) -> Result<LogMoments>;

    fn check(&self, k: &AllocationVector, spec: &RiskSpec) -> Result<()> {
        if k.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: k.len() });
        }
        if spec.n != self.stages() {
            return Err(Error::PeriodMismatch { dist: self.stages(), spec: spec.n });
        }
        Ok(())
    }

    fn value(&self, k: &AllocationVector, spec: &RiskSpec) -> Result<ObjectiveValue> {
        self.check(k, spec)?;
        Ok(self.moments_at(k, false)?.objective(spec))
    }

    fn value_and_gradient(&self, k: &AllocationVector, spec: &RiskSpec) -> Result<(ObjectiveValue, Vec<f64>)> {
        self.check(k, spec)?;
        let m = self.moments_at(k, true)?;
        Ok((m.objective(spec), m.gradient(spec)))
    }

    fn residuals(&self, k: &AllocationVector, spec: &RiskSpec) -> Result<Vec<f64>> {
        self.check(k, spec)?;
        Ok(self.moments_at(k, true)?.kkt_residuals(spec))
    }
}

/// Atom sums for arbitrary weights (not required to lie on the simplex).
pub fn exact_moments(dist: &CompoundReturnDistribution, weights: &[f64], with_ratios: bool) -> Result<LogMoments> {
    let m = dist.m();
    if weights.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: weights.len() });
    }
    let mut e_log = 0.0;
    let mut e_log_sq = 0.0;
    let mut ratio = vec![0.0; if with_ratios { m } else { 0 }];
    let mut log_ratio = ratio.clone();
    for (j, atom) in dist.atoms().iter().enumerate() {
        let w: f64 = atom.returns.iter().zip(weights).map(|(r, k)| r * k).sum();
        if !(w > 0.0 && w.is_finite()) {
            return Err(Error::NonPositiveReturn { atom: j, value: w });
        }
        let l = w.ln();
        e_log += atom.prob * l;
        e_log_sq += atom.prob * l * l;
        if with_ratios {
            for i in 0..m {
                let q = atom.prob * atom.returns[i] / w;
                ratio[i] += q;
                log_ratio[i] += q * l;
            }
        }
    }
    Ok(LogMoments { e_log, e_log_sq, ratio, log_ratio })
}

impl Objective for CompoundReturnDistribution {
    fn dim(&self) -> usize {
        self.m()
    }

    fn stages(&self) -> u32 {
        self.n()
    }

    fn moments_at(&self, k: &AllocationVector, with_ratios: bool) -> Result<LogMoments> {
        exact_moments(self, k.as_slice(), with_ratios)
    }
}

/// Objective via `E[L]/n - rho/(2n^2) E[L^2] + rho/(2n^2) E[L]^2`.
pub fn evaluate_exact(
    dist: &CompoundReturnDistribution,
    k: &AllocationVector,
    spec: &RiskSpec,
) -> Result<ObjectiveValue> {
    dist.value(k, spec)
}

/// Objective via the centred variance `E[(L - E[L])^2]` (two passes).
pub fn evaluate_exact_centered(
    dist: &CompoundReturnDistribution,
    k: &AllocationVector,
    spec: &RiskSpec,
) -> Result<ObjectiveValue> {
    dist.check(k, spec)?;
    let e_log = exact_moments(dist, k.as_slice(), false)?.e_log;
    let var = dist
        .atoms()
        .iter()
        .map(|a| {
            let w: f64 = a.returns.iter().zip(k.as_slice()).map(|(r, k)| r * k).sum();
            a.prob * (w.ln() - e_log).powi(2)
        })
        .sum();
    Ok(ObjectiveValue::assemble(e_log, var, spec))
}

/// `var(log <K, R_n>)`.
pub fn log_variance(dist: &CompoundReturnDistribution, k: &AllocationVector) -> Result<f64> {
    if k.len() != dist.m() {
        return Err(Error::DimensionMismatch { expected: dist.m(), got: k.len() });
    }
    log_variance_at(dist, k.as_slice())
}

/// Log-variance for arbitrary weights with a positive growth ratio at every atom.
pub fn log_variance_at(dist: &CompoundReturnDistribution, weights: &[f64]) -> Result<f64> {
    Ok(exact_moments(dist, weights, false)?.var_log())
}

/// Exact gradient of `u` with respect to each `K_i`.
pub fn gradient_exact(dist: &CompoundReturnDistribution, k: &AllocationVector, spec: &RiskSpec) -> Result<Vec<f64>> {
    Ok(dist.value_and_gradient(k, spec)?.1)
}

/// Second central difference (step [`LOGVAR_FD_STEP`]) of the log-variance
/// of a two-alternative distribution along `K = (1 - k2, k2)`.
pub fn discrete_logvar_second_derivative(dist: &CompoundReturnDistribution, k2: f64) -> Result<f64> {
    if dist.m() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: dist.m() });
    }
    if !(0.0..1.0).contains(&k2) {
        return Err(Error::Domain(format!("k2 must lie in [0, 1), got {k2}")));
    }
    let h = LOGVAR_FD_STEP;
    let v = |x: f64| log_variance_at(dist, &[1.0 - x, x]);
    Ok((v(k2 + h)? - 2.0 * v(k2)? + v(k2 - h)?) / (h * h))
}

/// Closed-form curvature of the two-outcome bet's log-variance,
/// `16 p (1-p) (2 + k2 log((2+k2)/(2-k2))) / (k2^2 - 4)^2`.
pub fn betting_logvar_second_derivative(p: f64, k2: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("p must lie in (0, 1), got {p}")));
    }
    if !(0.0..2.0).contains(&k2) {
        return Err(Error::Domain(format!("k2 must lie in [0, 2), got {k2}")));
    }
    let num = 16.0 * p * (1.0 - p) * (2.0 + k2 * ((2.0 + k2) / (2.0 - k2)).ln());
    Ok(num / (k2 * k2 - 4.0).powi(2))
}
