//! Per-stage payoff models and the compound returns they induce.

use std::cmp::Ordering;

use crate::error::{Error, Result};

/// Upper bound on the number of atoms produced by exact compounding.
pub const DEFAULT_ATOM_CAP: usize = 100_000;

const PROB_SUM_TOL: f64 = 1e-12;
const COMPOUND_PROB_SUM_TOL: f64 = 1e-10;
const MERGE_REL_TOL: f64 = 1e-12;

/// One joint outcome of a single stage: the net payoff of every alternative.
#[derive(Debug, Clone, PartialEq)]
pub struct PayoffAtom {
    pub payoffs: Vec<f64>,
    pub prob: f64,
}

impl PayoffAtom {
    pub fn new(payoffs: Vec<f64>, prob: f64) -> Self {
        Self { payoffs, prob }
    }
}

/// Distribution of the per-stage payoff vector `X(k)`. Stages are i.i.d.
#[derive(Debug, Clone, PartialEq)]
pub enum PayoffModel {
    /// Finitely many joint outcomes.
    DiscreteJoint { atoms: Vec<PayoffAtom> },
    /// Two alternatives: a risk-free one paying zero and a risky one with
    /// payoff uniform on `(-1, x_max]`.
    ContinuousUniform { x_max: f64 },
    /// Every one of the `m` alternatives pays `rate` with certainty.
    Deterministic { rate: f64, m: usize },
}

impl PayoffModel {
    pub fn discrete(atoms: Vec<PayoffAtom>) -> Result<Self> {
        let model = PayoffModel::DiscreteJoint { atoms };
        model.validate()?;
        Ok(model)
    }

    pub fn continuous_uniform(x_max: f64) -> Result<Self> {
        let model = PayoffModel::ContinuousUniform { x_max };
        model.validate()?;
        Ok(model)
    }

    pub fn deterministic(rate: f64, m: usize) -> Result<Self> {
        let model = PayoffModel::Deterministic { rate, m };
        model.validate()?;
        Ok(model)
    }

    /// The two-outcome bet: a zero-rate risk-free alternative and a risky one
    /// paying `+1/2` with probability `p` and `-1/2` otherwise.
    pub fn betting(p: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(format!("win probability must lie in (0, 1), got {p}")));
        }
        Self::discrete(vec![PayoffAtom::new(vec![0.0, 0.5], p), PayoffAtom::new(vec![0.0, -0.5], 1.0 - p)])
    }

    /// Number of alternatives.
    pub fn m(&self) -> usize {
        match self {
            PayoffModel::DiscreteJoint { atoms } => atoms.first().map_or(0, |a| a.payoffs.len()),
            PayoffModel::ContinuousUniform { .. } => 2,
            PayoffModel::Deterministic { m, .. } => *m,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PayoffModel::DiscreteJoint { atoms } => {
                if atoms.is_empty() {
                    return Err(Error::InvalidModel("atoms-nonempty: discrete model needs at least one atom".into()));
                }
                let m = atoms[0].payoffs.len();
                if m == 0 {
                    return Err(Error::InvalidModel(
                        "alternatives-nonempty: atoms must carry at least one payoff".into(),
                    ));
                }
                let mut total = 0.0;
                for (j, atom) in atoms.iter().enumerate() {
                    if atom.payoffs.len() != m {
                        return Err(Error::InvalidModel(format!(
                            "payoff-dimension: atom {j} has {} payoffs, atom 0 has {m}",
                            atom.payoffs.len()
                        )));
                    }
                    if !(atom.prob > 0.0 && atom.prob <= 1.0) {
                        return Err(Error::InvalidModel(format!(
                            "probability-range: atom {j} probability {} is outside (0, 1]",
                            atom.prob
                        )));
                    }
                    if let Some(x) = atom.payoffs.iter().find(|x| !(x.is_finite() && **x > -1.0)) {
                        return Err(Error::InvalidModel(format!(
                            "payoff-lower-bound: atom {j} payoff {x} must be finite and > -1"
                        )));
                    }
                    total += atom.prob;
                }
                if (total - 1.0).abs() > PROB_SUM_TOL {
                    return Err(Error::InvalidModel(format!(
                        "probability-sum: atom probabilities sum to {total}, expected 1"
                    )));
                }
                Ok(())
            }
            PayoffModel::ContinuousUniform { x_max } => {
                if x_max.is_finite() && *x_max > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidModel(format!("x-max-positive: x_max must be > 0, got {x_max}")))
                }
            }
            PayoffModel::Deterministic { rate, m } => {
                if !(rate.is_finite() && *rate >= 0.0) {
                    return Err(Error::InvalidModel(format!("rate-nonnegative: rate must be >= 0, got {rate}")));
                }
                if *m == 0 {
                    return Err(Error::InvalidModel("alternatives-nonempty: deterministic model needs m >= 1".into()));
                }
                Ok(())
            }
        }
    }

    /// Per-stage expected gross return `E[1 + X_i]` for each alternative.
    pub fn mean_gross_return(&self) -> Vec<f64> {
        match self {
            PayoffModel::DiscreteJoint { atoms } => {
                let mut mean = vec![0.0; self.m()];
                for atom in atoms {
                    for (acc, x) in mean.iter_mut().zip(&atom.payoffs) {
                        *acc += atom.prob * (1.0 + x);
                    }
                }
                mean
            }
            PayoffModel::ContinuousUniform { x_max } => vec![1.0, (1.0 + x_max) / 2.0],
            PayoffModel::Deterministic { rate, m } => vec![1.0 + rate; *m],
        }
    }
}

/// One realization of the compound return vector `R_n` and its probability.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnAtom {
    pub returns: Vec<f64>,
    pub prob: f64,
}

/// Finite distribution of the compound gross return vector over `n` stages.
#[derive(Debug, Clone, PartialEq)]
pub struct CompoundReturnDistribution {
    atoms: Vec<ReturnAtom>,
    n: u32,
}

impl CompoundReturnDistribution {
    pub fn new(atoms: Vec<ReturnAtom>, n: u32) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("decision period n must be >= 1".into()));
        }
        let m = atoms.first().map_or(0, |a| a.returns.len());
        if m == 0 {
            return Err(Error::InvalidModel("compound distribution needs non-empty atoms".into()));
        }
        let mut total = 0.0;
        for (j, atom) in atoms.iter().enumerate() {
            if atom.returns.len() != m {
                return Err(Error::DimensionMismatch { expected: m, got: atom.returns.len() });
            }
            if !(atom.prob > 0.0 && atom.prob <= 1.0) {
                return Err(Error::InvalidModel(format!("atom {j} probability {} outside (0, 1]", atom.prob)));
            }
            if atom.returns.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
                return Err(Error::InvalidModel(format!("atom {j} has a non-positive compound return")));
            }
            total += atom.prob;
        }
        if (total - 1.0).abs() > COMPOUND_PROB_SUM_TOL {
            return Err(Error::InvalidModel(format!("compound probabilities sum to {total}")));
        }
        Ok(Self { atoms, n })
    }

    #[cfg(test)]
    pub(crate) fn new_unchecked(atoms: Vec<ReturnAtom>, n: u32) -> Self {
        Self { atoms, n }
    }

    pub fn atoms(&self) -> &[ReturnAtom] {
        &self.atoms
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn m(&self) -> usize {
        self.atoms[0].returns.len()
    }

    /// Expected compound gross return per alternative.
    pub fn mean_returns(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.m()];
        for atom in &self.atoms {
            for (acc, r) in mean.iter_mut().zip(&atom.returns) {
                *acc += atom.prob * r;
            }
        }
        mean
    }
}

/// Number of multisets of size `n` drawn from `kinds` outcome types,
/// `C(n + kinds - 1, kinds - 1)`, saturating at `u128::MAX`.
pub fn multiset_count(n: u32, kinds: usize) -> u128 {
    if kinds == 0 {
        return 0;
    }
    let k = (kinds - 1) as u128;
    let mut acc: u128 = 1;
    // C(n + k, k) built as a running product of exact binomials.
    for i in 1..=k {
        acc = match acc.checked_mul(n as u128 + i) {
            Some(v) => v / i,
            None => return u128::MAX,
        };
    }
    acc
}

/// Compounds a discrete per-stage model over `n` stages.
///
/// Stage outcomes are exchangeable, so only the count vector `c` (how many
/// stages landed on each per-stage atom) matters: the probability is the
/// multinomial weight `n!/prod(c_j!) * prod(p_j^c_j)` and the return of
/// alternative `i` is `prod_j (1 + x_ji)^c_j`. Atoms with numerically equal
/// return vectors are merged.
pub fn build_discrete_compound(model: &PayoffModel, n: u32, atom_cap: usize) -> Result<CompoundReturnDistribution> {
    let atoms = match model {
        PayoffModel::DiscreteJoint { atoms } => atoms,
        PayoffModel::Deterministic { rate, m } => {
            let r = (1.0 + rate).powi(n as i32);
            return CompoundReturnDistribution::new(vec![ReturnAtom { returns: vec![r; *m], prob: 1.0 }], n);
        }
        PayoffModel::ContinuousUniform { .. } => {
            return Err(Error::InvalidModel("exact compounding needs a discrete or deterministic model".into()))
        }
    };
    model.validate()?;
    if n == 0 {
        return Err(Error::Domain("decision period n must be >= 1".into()));
    }
    let needed = multiset_count(n, atoms.len());
    if needed > atom_cap as u128 {
        return Err(Error::CapExceeded { needed, cap: atom_cap });
    }

    let m = model.m();
    let ln_fact: Vec<f64> = std::iter::once(0.0)
        .chain((1..=n).scan(0.0, |acc, k| {
            *acc += (k as f64).ln();
            Some(*acc)
        }))
        .collect();
    let ln_p: Vec<f64> = atoms.iter().map(|a| a.prob.ln()).collect();
    let gross: Vec<Vec<f64>> = atoms.iter().map(|a| a.payoffs.iter().map(|x| 1.0 + x).collect()).collect();

    let mut out = Vec::with_capacity(needed as usize);
    let mut counts = vec![0u32; atoms.len()];
    enumerate_counts(&mut counts, 0, n, &mut |c| {
        let mut ln_w = ln_fact[n as usize];
        let mut returns = vec![1.0; m];
        for (j, &cj) in c.iter().enumerate() {
            if cj == 0 {
                continue;
            }
            ln_w += cj as f64 * ln_p[j] - ln_fact[cj as usize];
            for (r, g) in returns.iter_mut().zip(&gross[j]) {
                *r *= g.powi(cj as i32);
            }
        }
        let prob = ln_w.exp();
        if prob > 0.0 {
            out.push(ReturnAtom { returns, prob });
        }
    });

    CompoundReturnDistribution::new(merge_atoms(out), n)
}

fn enumerate_counts(counts: &mut [u32], idx: usize, remaining: u32, emit: &mut impl FnMut(&[u32])) {
    if idx + 1 == counts.len() {
        counts[idx] = remaining;
        emit(counts);
        return;
    }
    for c in (0..=remaining).rev() {
        counts[idx] = c;
        enumerate_counts(counts, idx + 1, remaining - c, emit);
    }
    counts[idx] = 0;
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
}

fn nearly_equal(a: &[f64], b: &[f64]) -> bool {
    let scale = a.iter().chain(b).fold(0.0f64, |s, x| s.max(x.abs()));
    let dist = a.iter().zip(b).fold(0.0f64, |d, (x, y)| d.max((x - y).abs()));
    dist <= MERGE_REL_TOL * scale
}

pub(crate) fn merge_atoms(mut atoms: Vec<ReturnAtom>) -> Vec<ReturnAtom> {
    atoms.sort_by(|a, b| lexicographic(&a.returns, &b.returns));
    let mut merged: Vec<ReturnAtom> = Vec::with_capacity(atoms.len());
    for atom in atoms {
        match merged.last_mut() {
            Some(last) if nearly_equal(&last.returns, &atom.returns) => last.prob += atom.prob,
            _ => merged.push(atom),
        }
    }
    for atom in &mut merged {
        atom.prob = atom.prob.min(1.0);
    }
    merged
}

/// Maps a payoff `x` uniform on `(-1, x_max]` to `-log((1 + x)/(1 + x_max))`,
/// which is exponentially distributed with unit rate.
pub fn uniform_to_exponential(x: f64, x_max: f64) -> Result<f64> {
    if !(x_max > 0.0) || !(x > -1.0 && x <= x_max) {
        return Err(Error::Domain(format!("x = {x} must lie in (-1, {x_max}]")));
    }
    Ok(x_max.ln_1p() - x.ln_1p())
}

/// Density of the induced payoff `R_n - 1` when every stage payoff is
/// uniform on `(-1, x_max]`.
///
/// With `t = log((1 + x_max)^n / (1 + z))` the compound payoff is an
/// Erlang(n, 1) variable in disguise, which gives the closed forms below.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErlangCompoundDensity {
    n: u32,
    x_max: f64,
}

impl ErlangCompoundDensity {
    pub fn new(n: u32, x_max: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("n must be >= 1".into()));
        }
        if !(x_max.is_finite() && x_max > 0.0) {
            return Err(Error::Domain(format!("x_max must be > 0, got {x_max}")));
        }
        Ok(Self { n, x_max })
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    /// `n * log(1 + x_max)`, the log of the largest attainable gross return.
    pub fn log_scale(&self) -> f64 {
        self.n as f64 * self.x_max.ln_1p()
    }

    /// Open support `(-1, (1 + x_max)^n - 1)`.
    pub fn support(&self) -> (f64, f64) {
        (-1.0, self.log_scale().exp_m1())
    }

    /// Erlang variable corresponding to `z`; positive on the support.
    pub fn erlang_variable(&self, z: f64) -> f64 {
        self.log_scale() - z.ln_1p()
    }

    /// Inverse of [`Self::erlang_variable`].
    pub fn payoff_at(&self, t: f64) -> f64 {
        (self.log_scale() - t).exp_m1()
    }

    pub fn pdf(&self, z: f64) -> f64 {
        let (lo, hi) = self.support();
        if !(z > lo && z < hi) {
            return 0.0;
        }
        let t = self.erlang_variable(z);
        let k = self.n - 1;
        if k == 0 {
            return (-self.log_scale()).exp();
        }
        (k as f64 * t.ln() - ln_factorial(k) - self.log_scale()).exp()
    }

    pub fn cdf(&self, z: f64) -> f64 {
        let (lo, hi) = self.support();
        if z <= lo {
            return 0.0;
        }
        if z >= hi {
            return 1.0;
        }
        erlang_upper_tail(self.n, self.erlang_variable(z)).min(1.0)
    }
}

pub(crate) fn ln_factorial(k: u32) -> f64 {
    (2..=k).map(|i| (i as f64).ln()).sum()
}

/// Density of Erlang(n, 1) at `t >= 0`.
pub(crate) fn erlang_pdf(n: u32, t: f64) -> f64 {
    if t < 0.0 {
        return 0.0;
    }
    if n == 1 {
        return (-t).exp();
    }
    if t == 0.0 {
        return 0.0;
    }
    let k = n - 1;
    (k as f64 * t.ln() - t - ln_factorial(k)).exp()
}

/// `P(E_n > t) = e^{-t} * sum_{k<n} t^k / k!` for `E_n ~ Erlang(n, 1)`.
///
/// Below the mean it is `1 - P(E_n <= t)` with the lower tail summed as
/// its own series, which keeps the result monotone where it is close to 1.
pub(crate) fn erlang_upper_tail(n: u32, t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    if t < n as f64 {
        return 1.0 - erlang_lower_tail(n, t);
    }
    let mut term = (-t).exp();
    if term == 0.0 {
        // Underflow of e^{-t}: sum the terms in log space.
        let ln_t = t.ln();
        return (0..n).map(|k| (k as f64 * ln_t - t - ln_factorial(k)).exp()).sum();
    }
    let mut sum = term;
    for k in 1..n {
        term *= t / k as f64;
        sum += term;
    }
    sum
}

/// `P(E_n <= t) = e^{-t} * sum_{k>=n} t^k / k!`, for `0 < t < n`.
fn erlang_lower_tail(n: u32, t: f64) -> f64 {
    let mut term = (n as f64 * t.ln() - t - ln_factorial(n)).exp();
    let mut sum = term;
    let mut k = n;
    while term > sum * f64::EPSILON * 0.25 {
        k += 1;
        term *= t / k as f64;
        sum += term;
    }
    sum.min(1.0)
}
