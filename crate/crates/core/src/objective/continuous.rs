//! Quadrature evaluator for a zero-rate risk-free alternative paired with a
//! risky one whose per-stage payoff is uniform on `(-1, x_max]`.
//!
//! Integrals are taken in the Erlang variable `t = log((1+x_max)^n / R_n)`,
//! `t ~ Erlang(n, 1)`, where the compound return is `R_n = (1+x_max)^n e^{-t}`.
//! The payoff density is singular at `R_n -> 0` for `n >= 2`; in `t` the
//! integrand is smooth and only the upper tail has to be truncated.

use super::{AllocationVector, LogMoments, Objective, ObjectiveValue, RiskSpec, LOGVAR_FD_STEP};
use crate::error::{Error, Result};
use crate::payoff::{erlang_pdf, ErlangCompoundDensity};
use crate::quadrature::{erlang_truncation, integrate, QuadratureConfig};

/// Moments of `L = log(w_free + w_risky R_n)` for arbitrary weights.
pub fn continuous_moments(
    x_max: f64,
    n: u32,
    weights: [f64; 2],
    quad: &QuadratureConfig,
    with_ratios: bool,
) -> Result<LogMoments> {
    let density = ErlangCompoundDensity::new(n, x_max)?;
    let [w_free, w_risky] = weights;
    let scale = density.log_scale();
    // Smallest attainable growth ratio is approached as t -> infinity.
    let floor = w_free + w_risky * if w_risky < 0.0 { scale.exp() } else { 0.0 };
    if !(floor > 0.0) && !(w_free == 0.0 && w_risky > 0.0) {
        return Err(Error::Domain(format!("weights ({w_free}, {w_risky}) allow a non-positive growth ratio")));
    }
    let upper = erlang_truncation(n, quad.tail_mass);
    let drift = w_free + w_risky - 1.0;
    let dim = if with_ratios { 6 } else { 2 };

    let integrand = |t: f64, out: &mut [f64]| {
        let pdf = erlang_pdf(n, t);
        let log_r = scale - t;
        let (log_w, inv_w) = if w_free == 0.0 {
            (w_risky.ln() + log_r, (-log_r).exp() / w_risky)
        } else {
            let w = w_free + w_risky * log_r.exp();
            let log_w = if w < 0.5 { w.ln() } else { (drift + w_risky * log_r.exp_m1()).ln_1p() };
            (log_w, 1.0 / w)
        };
        out[0] = log_w * pdf;
        out[1] = log_w * log_w * pdf;
        if with_ratios {
            let risky_ratio = if w_free == 0.0 { 1.0 / w_risky } else { log_r.exp() * inv_w };
            out[2] = inv_w * pdf;
            out[3] = risky_ratio * pdf;
            out[4] = log_w * inv_w * pdf;
            out[5] = log_w * risky_ratio * pdf;
        }
    };
    let r = integrate(integrand, 0.0, upper, dim, quad)?;
    let v = r.value;
    let (ratio, log_ratio) = if with_ratios { (vec![v[2], v[3]], vec![v[4], v[5]]) } else { (vec![], vec![]) };
    Ok(LogMoments { e_log: v[0], e_log_sq: v[1], ratio, log_ratio })
}

/// Objective for the uniform-demand model; `k = (K_free, K_risky)`.
pub fn evaluate_continuous(
    x_max: f64,
    k: &AllocationVector,
    spec: &RiskSpec,
    quad: &QuadratureConfig,
) -> Result<ObjectiveValue> {
    ContinuousUniformObjective::new(x_max, spec.n, *quad)?.value(k, spec)
}

/// `var(log(1 + k2 X_n))` with `X_n = R_n - 1`. `k2` may leave `[0, 1]`
/// as long as the growth ratio stays positive, which finite differences need.
pub fn continuous_log_variance(x_max: f64, n: u32, k2: f64, quad: &QuadratureConfig) -> Result<f64> {
    Ok(continuous_moments(x_max, n, [1.0 - k2, k2], quad, false)?.var_log())
}

/// Second central difference (step [`LOGVAR_FD_STEP`]) of the log-variance in `k2`.
/// Within one step of `k2 = 1` a backward difference is used instead.
pub fn continuous_logvar_second_derivative(x_max: f64, n: u32, k2: f64, quad: &QuadratureConfig) -> Result<f64> {
    if !(0.0..1.0).contains(&k2) {
        return Err(Error::Domain(format!("k2 must lie in [0, 1), got {k2}")));
    }
    let h = LOGVAR_FD_STEP;
    let v = |x: f64| continuous_log_variance(x_max, n, x, quad);
    if k2 + h <= 1.0 {
        Ok((v(k2 + h)? - 2.0 * v(k2)? + v(k2 - h)?) / (h * h))
    } else {
        Ok((v(k2)? - 2.0 * v(k2 - h)? + v(k2 - 2.0 * h)?) / (h * h))
    }
}

/// [`Objective`] backed by [`continuous_moments`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuousUniformObjective {
    x_max: f64,
    n: u32,
    quad: QuadratureConfig,
}

impl ContinuousUniformObjective {
    pub fn new(x_max: f64, n: u32, quad: QuadratureConfig) -> Result<Self> {
        ErlangCompoundDensity::new(n, x_max)?;
        Ok(Self { x_max, n, quad })
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }
}

impl Objective for ContinuousUniformObjective {
    fn dim(&self) -> usize {
        2
    }

    fn stages(&self) -> u32 {
        self.n
    }

    fn moments_at(&self, k: &AllocationVector, with_ratios: bool) -> Result<LogMoments> {
        if k.len() != 2 {
            return Err(Error::DimensionMismatch { expected: 2, got: k.len() });
        }
        continuous_moments(self.x_max, self.n, [k[0], k[1]], &self.quad, with_ratios)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn quad() -> QuadratureConfig {
        QuadratureConfig::default()
    }

    #[test]
    fn risk_free_is_zero() {
        for n in [1, 5, 10] {
            let v = evaluate_continuous(1.0, &AllocationVector::vertex(2, 0), &RiskSpec::new(0.5, n).unwrap(), &quad())
                .unwrap();
            assert_eq!(v.u, 0.0);
            assert_eq!(v.var_log, 0.0);
        }
    }

    #[test]
    fn single_stage_full_risk_closed_form() {
        let v = evaluate_continuous(1.0, &AllocationVector::vertex(2, 1), &RiskSpec::new(0.0, 1).unwrap(), &quad())
            .unwrap();
        assert_relative_eq!(v.u, 2f64.ln() - 1.0, epsilon = 1e-12);
        // log(1+X) = log 2 - Exp(1): variance 1
        assert_relative_eq!(v.var_log, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn full_risk_n_stages() {
        // L = n log(1 + x_max) - Erlang(n, 1): mean n(log 2 - 1), variance n.
        let m = continuous_moments(1.0, 5, [0.0, 1.0], &quad(), true).unwrap();
        assert_relative_eq!(m.e_log, 5.0 * (2f64.ln() - 1.0), epsilon = 1e-10);
        assert_relative_eq!(m.var_log(), 5.0, epsilon = 1e-9);
        assert_relative_eq!(m.ratio[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn vertex_ratios_equal_compound_mean() {
        // E[1 + X] = (1 + x_max)/2
        let m = continuous_moments(2.0, 3, [1.0, 0.0], &quad(), true).unwrap();
        assert_relative_eq!(m.ratio[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(m.ratio[1], 1.5f64.powi(3), epsilon = 1e-11);
        assert_eq!(m.log_ratio, vec![0.0, 0.0]);
    }

    #[test]
    fn curvature_at_zero_is_twice_payoff_variance() {
        // var(X_n) = (E[(1+X)^2])^n - (E[1+X])^(2n) = (4/3)^n - 1 for x_max = 1
        for n in [1u32, 5] {
            let d2 = continuous_logvar_second_derivative(1.0, n, 0.0, &quad()).unwrap();
            let var = (4.0f64 / 3.0).powi(n as i32) - 1.0;
            assert_relative_eq!(d2, 2.0 * var, max_relative = 1e-3);
        }
    }

    #[test]
    fn curvature_domain() {
        assert!(continuous_logvar_second_derivative(1.0, 1, 1.0, &quad()).is_err());
        assert!(continuous_logvar_second_derivative(1.0, 1, -0.1, &quad()).is_err());
        assert!(continuous_logvar_second_derivative(1.0, 1, 0.99995, &quad()).unwrap() > 0.0);
    }

    #[test]
    fn negative_ratio_weights_rejected() {
        assert!(continuous_moments(1.0, 2, [1.5, -0.5], &quad(), false).is_err());
    }
}
