//! First-order necessary conditions on the simplex.
//!
//! With `g_i(K) = E[R_i/W] - (rho/n) E[L R_i/W] + (rho/n) E[L] E[R_i/W]`,
//! a maximizer satisfies `g_i = 1` for every alternative it holds and
//! `g_i <= 1` for every alternative it leaves out. The multiplier of the
//! budget constraint is always 1 because `sum_i K_i g_i = 1` identically.

use crate::error::{Error, Result};
use crate::objective::{AllocationVector, Objective, RiskSpec};
use crate::payoff::{build_discrete_compound, PayoffModel, DEFAULT_ATOM_CAP};

/// `K_i` above this counts as held (equality branch).
pub const ACTIVITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct KktReport {
    pub residuals: Vec<f64>,
    pub active: Vec<bool>,
    pub satisfied: bool,
    /// Largest violated margin; zero when satisfied.
    pub max_violation: f64,
}

impl KktReport {
    /// Builds the report from residuals already evaluated at `k`.
    pub fn from_residuals(residuals: Vec<f64>, k: &AllocationVector, tol: f64) -> Self {
        let active: Vec<bool> = k.as_slice().iter().map(|x| *x > ACTIVITY_TOL).collect();
        let mut satisfied = true;
        let mut max_violation: f64 = 0.0;
        for (g, held) in residuals.iter().zip(&active) {
            let margin = if *held { (g - 1.0).abs() } else { g - 1.0 };
            if !(margin <= tol) {
                satisfied = false;
                max_violation = max_violation.max(if margin.is_nan() { f64::INFINITY } else { margin });
            }
        }
        Self { residuals, active, satisfied, max_violation }
    }

    /// Multipliers of the nonnegativity constraints, `mu_i = 1 - g_i`.
    pub fn multipliers(&self) -> Vec<f64> {
        self.residuals.iter().map(|g| 1.0 - g).collect()
    }
}

/// Residuals `g_i(K)` for every alternative.
pub fn kkt_residuals<O: Objective + ?Sized>(obj: &O, k: &AllocationVector, spec: &RiskSpec) -> Result<Vec<f64>> {
    obj.residuals(k, spec)
}

/// Checks both branches of the necessary conditions at `k` with tolerance `tol`.
pub fn certify<O: Objective + ?Sized>(obj: &O, k: &AllocationVector, spec: &RiskSpec, tol: f64) -> Result<KktReport> {
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance must be > 0, got {tol}")));
    }
    Ok(KktReport::from_residuals(obj.residuals(k, spec)?, k, tol))
}

const BISECTION_WIDTH: f64 = 1e-12;

/// Optimal risky fraction for the single-stage bet paying `+1/2` with
/// probability `p` and `-1/2` otherwise, next to a zero-rate risk-free option.
///
/// Works with `h(K_2) = g_2 - g_1`, which has the sign of `du/dK_2` and
/// equals `(g_2 - 1)/(1 - K_2)` for `K_2 < 1`, so its interior roots are the
/// roots of `g_2 = 1`. (`g_2` itself is identically 1 at `K_2 = 1`.) The
/// root is bracketed by bisection and polished by Newton steps; without an
/// interior root the optimal boundary is returned.
pub fn solve_two_asset_betting(p: f64, rho: f64, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance must be > 0, got {tol}")));
    }
    let model = PayoffModel::betting(p)?;
    let spec = RiskSpec::new(rho, 1)?;
    let dist = build_discrete_compound(&model, 1, DEFAULT_ATOM_CAP)?;
    let excess = |k2: f64| -> Result<f64> {
        let k = AllocationVector::two_asset(k2)?;
        let g = dist.residuals(&k, &spec)?;
        Ok(g[1] - g[0])
    };

    // g_1(0) = 1, so h(0) = g_2(0) - 1.
    let at_zero = excess(0.0)?;
    if at_zero <= tol {
        return Ok(0.0);
    }
    // g_2(1) = 1, so h(1) = 1 - g_1(1).
    let at_one = excess(1.0)?;
    if at_one >= -tol {
        return Ok(1.0);
    }
    if !(at_zero > 0.0 && at_one < 0.0) {
        return Err(Error::NoConvergence(format!("residual does not change sign on [0, 1]: {at_zero} and {at_one}")));
    }

    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > BISECTION_WIDTH {
        let mid = 0.5 * (lo + hi);
        let f = excess(mid)?;
        if f.is_nan() {
            return Err(Error::NoConvergence(format!("residual is NaN at {mid}")));
        }
        if f > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    let mut x = 0.5 * (lo + hi);
    let mut fx = excess(x)?;
    for _ in 0..3 {
        let h = 1e-7;
        let slope = (excess(x + h)? - excess(x - h)?) / (2.0 * h);
        if slope == 0.0 || !slope.is_finite() {
            break;
        }
        let next = x - fx / slope;
        if !(next > lo - BISECTION_WIDTH && next < hi + BISECTION_WIDTH) {
            break;
        }
        let fnext = excess(next)?;
        if fnext.abs() >= fx.abs() {
            break;
        }
        x = next;
        fx = fnext;
    }
    let g2_gap = fx.abs() * (1.0 - x);
    if g2_gap > tol {
        return Err(Error::NoConvergence(format!("|g2 - 1| = {g2_gap} at K2 = {x}")));
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{ContinuousUniformObjective, LogMoments};
    use crate::quadrature::QuadratureConfig;
    use approx::assert_relative_eq;

    fn betting_dist(p: f64) -> crate::payoff::CompoundReturnDistribution {
        build_discrete_compound(&PayoffModel::betting(p).unwrap(), 1, DEFAULT_ATOM_CAP).unwrap()
    }

    #[test]
    fn residuals_at_kelly_point() {
        let d = betting_dist(0.6);
        let k = AllocationVector::two_asset(0.4).unwrap();
        let g = kkt_residuals(&d, &k, &RiskSpec::new(0.0, 1).unwrap()).unwrap();
        assert_relative_eq!(g[1], 0.6 * 1.5 / 1.2 + 0.4 * 0.5 / 0.8, epsilon = 1e-15);
        assert_relative_eq!(g[1], 1.0, epsilon = 1e-15);
        let first: f64 = g.iter().zip(k.as_slice()).map(|(g, k)| g * k).sum();
        assert_relative_eq!(first, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn kelly_point_certifies() {
        let d = betting_dist(0.6);
        let r = certify(&d, &AllocationVector::two_asset(0.4).unwrap(), &RiskSpec::new(0.0, 1).unwrap(), 1e-8).unwrap();
        assert!(r.satisfied);
        assert_eq!(r.max_violation, 0.0);
        assert_eq!(r.active, vec![true, true]);
    }

    #[test]
    fn risk_free_vertex_fails_for_favourable_bet() {
        let d = betting_dist(0.6);
        let r = certify(&d, &AllocationVector::vertex(2, 0), &RiskSpec::new(0.0, 1).unwrap(), 1e-8).unwrap();
        assert!(!r.satisfied);
        assert_relative_eq!(r.residuals[1], 1.1, epsilon = 1e-15);
        assert_relative_eq!(r.max_violation, 0.1, epsilon = 1e-14);
        assert_eq!(r.active, vec![true, false]);
        assert_relative_eq!(r.multipliers()[1], -0.1, epsilon = 1e-14);
    }

    #[test]
    fn inventory_corner_certifies() {
        let obj = ContinuousUniformObjective::new(1.0, 5, QuadratureConfig::default()).unwrap();
        let r = certify(&obj, &AllocationVector::vertex(2, 0), &RiskSpec::new(0.5, 5).unwrap(), 1e-8).unwrap();
        assert!(r.satisfied, "{r:?}");
        assert_relative_eq!(r.residuals[1], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn report_branches() {
        let k = AllocationVector::new(vec![0.5, 0.5, 0.0]).unwrap();
        let r = KktReport::from_residuals(vec![1.0, 1.0 + 2e-6, 0.3], &k, 1e-6);
        assert!(!r.satisfied);
        assert_relative_eq!(r.max_violation, 2e-6, epsilon = 1e-15);
        let r = KktReport::from_residuals(vec![1.0, 1.0, 1.0 + 5e-7], &k, 1e-6);
        assert!(r.satisfied);
        let r = KktReport::from_residuals(vec![1.0, 1.0, f64::NAN], &k, 1e-6);
        assert!(!r.satisfied);
    }

    #[test]
    fn residuals_from_moments() {
        let m = LogMoments { e_log: 0.2, e_log_sq: 0.1, ratio: vec![1.0, 2.0], log_ratio: vec![0.5, 0.25] };
        let g = m.kkt_residuals(&RiskSpec::new(2.0, 4).unwrap());
        assert_relative_eq!(g[0], 1.0 - 0.5 * 0.5 + 0.5 * 0.2 * 1.0, epsilon = 1e-15);
        assert_relative_eq!(g[1], 2.0 - 0.5 * 0.25 + 0.5 * 0.2 * 2.0, epsilon = 1e-15);
    }

    #[test]
    fn betting_solver_values() {
        assert_relative_eq!(solve_two_asset_betting(0.6, 0.0, 1e-12).unwrap(), 0.4, epsilon = 1e-10);
        assert!((solve_two_asset_betting(0.6, 0.1, 1e-12).unwrap() - 0.3646).abs() < 1e-3);
        assert!((solve_two_asset_betting(0.6, 1.0, 1e-12).unwrap() - 0.2035).abs() < 1e-3);
        assert_eq!(solve_two_asset_betting(0.75, 0.0, 1e-12).unwrap(), 1.0);
        assert!((solve_two_asset_betting(0.75, 1.0, 1e-12).unwrap() - 0.5643).abs() < 1e-3);
    }

    #[test]
    fn unfavourable_bet_stays_out() {
        assert_eq!(solve_two_asset_betting(0.5, 0.0, 1e-12).unwrap(), 0.0);
        assert_eq!(solve_two_asset_betting(0.3, 1.0, 1e-12).unwrap(), 0.0);
        assert_eq!(solve_two_asset_betting(0.9, 0.0, 1e-12).unwrap(), 1.0);
    }

    #[test]
    fn solver_rejects_bad_inputs() {
        assert!(solve_two_asset_betting(1.0, 0.0, 1e-12).is_err());
        assert!(solve_two_asset_betting(0.6, -1.0, 1e-12).is_err());
        assert!(solve_two_asset_betting(0.6, 0.0, 0.0).is_err());
    }
}
