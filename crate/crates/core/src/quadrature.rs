//! Globally adaptive Gauss–Kronrod (7/15) quadrature for vector integrands.
//!
//! All components share one set of abscissae, so the expectations that make
//! up an objective value and its gradient are computed in a single sweep.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureConfig {
    /// Per-component relative tolerance on the accumulated error estimate.
    pub rel_tol: f64,
    /// Absolute floor, used for components whose integral is (near) zero.
    pub abs_tol: f64,
    pub max_subdivisions: usize,
    /// Probability mass the Erlang-variable truncation may discard.
    pub tail_mass: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self { rel_tol: 1e-10, abs_tol: 1e-14, max_subdivisions: 4000, tail_mass: 1e-12 }
    }
}

#[allow(clippy::excessive_precision)]
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.000_000_000_000_000_000_000_000_000_000_000,
];

#[allow(clippy::excessive_precision)]
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

// Gauss weights for the odd-indexed Kronrod nodes, plus the centre.
#[allow(clippy::excessive_precision)]
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

#[derive(Debug, Clone)]
struct Segment {
    a: f64,
    b: f64,
    value: Vec<f64>,
    error: Vec<f64>,
    priority: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.priority.total_cmp(&other.priority) == Ordering::Equal
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority.total_cmp(&other.priority)
    }
}

/// Result of [`integrate`]: integral estimates and error estimates per component.
#[derive(Debug, Clone)]
pub struct Integral {
    pub value: Vec<f64>,
    pub error: Vec<f64>,
    pub subdivisions: usize,
}

fn rule<F>(f: &F, a: f64, b: f64, dim: usize, buf: &mut [f64]) -> (Vec<f64>, Vec<f64>)
where
    F: Fn(f64, &mut [f64]),
{
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut kronrod = vec![0.0; dim];
    let mut gauss = vec![0.0; dim];
    let mut res_abs = vec![0.0; dim];
    let mut fvals = vec![[0.0f64; 15]; dim];

    f(center, buf);
    for c in 0..dim {
        fvals[c][7] = buf[c];
        kronrod[c] = WGK[7] * buf[c];
        gauss[c] = WG[3] * buf[c];
        res_abs[c] = kronrod[c].abs();
    }
    for j in 0..7 {
        let dx = half * XGK[j];
        f(center - dx, buf);
        for c in 0..dim {
            fvals[c][j] = buf[c];
        }
        f(center + dx, buf);
        for c in 0..dim {
            fvals[c][14 - j] = buf[c];
            let sum = fvals[c][j] + fvals[c][14 - j];
            kronrod[c] += WGK[j] * sum;
            res_abs[c] += WGK[j] * (fvals[c][j].abs() + fvals[c][14 - j].abs());
            if j % 2 == 1 {
                gauss[c] += WG[j / 2] * sum;
            }
        }
    }

    let mut error = vec![0.0; dim];
    for c in 0..dim {
        let mean = 0.5 * kronrod[c];
        let res_asc: f64 = (0..15).map(|i| WGK[if i <= 7 { i } else { 14 - i }] * (fvals[c][i] - mean).abs()).sum();
        let mut err = ((kronrod[c] - gauss[c]) * half).abs();
        let res_asc = res_asc * half.abs();
        let res_abs = res_abs[c] * half.abs();
        if res_asc != 0.0 && err != 0.0 {
            err = res_asc * (200.0 * err / res_asc).powf(1.5).min(1.0);
        }
        if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
            err = err.max(50.0 * f64::EPSILON * res_abs);
        }
        error[c] = err;
        kronrod[c] *= half;
    }
    (kronrod, error)
}

/// Integrates the `dim`-component integrand `f` over `[a, b]`.
///
/// `f(x, out)` writes the integrand components at `x` into `out`. The
/// interval with the largest error estimate is bisected until every
/// component satisfies `error <= max(abs_tol, rel_tol * |value|)`.
pub fn integrate<F>(f: F, a: f64, b: f64, dim: usize, cfg: &QuadratureConfig) -> Result<Integral>
where
    F: Fn(f64, &mut [f64]),
{
    let mut buf = vec![0.0; dim];
    let (value, error) = rule(&f, a, b, dim, &mut buf);
    let mut heap = BinaryHeap::new();
    let priority = error.iter().cloned().fold(0.0, f64::max);
    heap.push(Segment { a, b, value: value.clone(), error: error.clone(), priority });
    let mut total = value;
    let mut total_err = error;
    let mut subdivisions = 0;

    let done =
        |total: &[f64], err: &[f64]| total.iter().zip(err).all(|(v, e)| *e <= cfg.abs_tol.max(cfg.rel_tol * v.abs()));

    while !done(&total, &total_err) {
        if subdivisions >= cfg.max_subdivisions {
            let (estimate, tolerance) = total
                .iter()
                .zip(&total_err)
                .map(|(v, e)| (*e, cfg.abs_tol.max(cfg.rel_tol * v.abs())))
                .max_by(|x, y| (x.0 - x.1).total_cmp(&(y.0 - y.1)))
                .unwrap_or((0.0, 0.0));
            return Err(Error::QuadratureNotConverged { estimate, tolerance });
        }
        let worst = heap.pop().expect("heap holds at least one segment");
        let mid = 0.5 * (worst.a + worst.b);
        if !(mid > worst.a && mid < worst.b) {
            // Interval cannot be split further in floating point.
            let tolerance = cfg.abs_tol;
            return Err(Error::QuadratureNotConverged { estimate: worst.priority, tolerance });
        }
        let (v1, e1) = rule(&f, worst.a, mid, dim, &mut buf);
        let (v2, e2) = rule(&f, mid, worst.b, dim, &mut buf);
        for c in 0..dim {
            total[c] += v1[c] + v2[c] - worst.value[c];
            total_err[c] += e1[c] + e2[c] - worst.error[c];
        }
        let p1 = e1.iter().cloned().fold(0.0, f64::max);
        let p2 = e2.iter().cloned().fold(0.0, f64::max);
        heap.push(Segment { a: worst.a, b: mid, value: v1, error: e1, priority: p1 });
        heap.push(Segment { a: mid, b: worst.b, value: v2, error: e2, priority: p2 });
        subdivisions += 1;
    }

    // Re-sum from the segments to shed the drift of the running updates.
    let mut value = vec![0.0; dim];
    let mut error = vec![0.0; dim];
    let mut segments = heap.into_vec();
    segments.sort_by(|x, y| x.a.total_cmp(&y.a));
    for s in &segments {
        for c in 0..dim {
            value[c] += s.value[c];
            error[c] += s.error[c];
        }
    }
    Ok(Integral { value, error, subdivisions })
}

/// Scalar convenience wrapper around [`integrate`].
pub fn integrate_scalar<F>(f: F, a: f64, b: f64, cfg: &QuadratureConfig) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    integrate(|x, out: &mut [f64]| out[0] = f(x), a, b, 1, cfg).map(|r| r.value[0])
}

/// Truncation point `T` for integrals against Erlang(n, 1): the smallest
/// `T >= n + 40` (in steps of 5) whose upper tail mass is below `tail_mass`.
pub fn erlang_truncation(n: u32, tail_mass: f64) -> f64 {
    let mut t = n as f64 + 40.0;
    while crate::payoff::erlang_upper_tail(n, t) >= tail_mass {
        t += 5.0;
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn polynomial_is_exact() {
        let cfg = QuadratureConfig::default();
        let v = integrate_scalar(|x| x.powi(5) - 3.0 * x * x, -1.0, 2.0, &cfg).unwrap();
        assert_relative_eq!(v, 64.0 / 6.0 - 1.0 / 6.0 - 9.0, epsilon = 1e-13);
    }

    #[test]
    fn log_endpoint_singularity() {
        let cfg = QuadratureConfig { rel_tol: 1e-12, ..Default::default() };
        let v = integrate_scalar(|x| x.ln(), 0.0, 1.0, &cfg).unwrap();
        assert_relative_eq!(v, -1.0, epsilon = 1e-11);
    }

    #[test]
    fn vector_components_converge_together() {
        let cfg = QuadratureConfig::default();
        let r = integrate(
            |x, out: &mut [f64]| {
                out[0] = x.sin();
                out[1] = 0.0;
                out[2] = (-x).exp();
            },
            0.0,
            std::f64::consts::PI,
            3,
            &cfg,
        )
        .unwrap();
        assert_relative_eq!(r.value[0], 2.0, epsilon = 1e-12);
        assert_eq!(r.value[1], 0.0);
        assert_relative_eq!(r.value[2], 1.0 - (-std::f64::consts::PI).exp(), epsilon = 1e-12);
    }

    #[test]
    fn reports_non_convergence() {
        let cfg = QuadratureConfig { max_subdivisions: 3, ..Default::default() };
        let err = integrate_scalar(|x| 1.0 / x.sqrt(), 0.0, 1.0, &cfg).unwrap_err();
        assert!(matches!(err, Error::QuadratureNotConverged { .. }));
    }

    #[test]
    fn truncation_grows_with_n() {
        let t10 = erlang_truncation(10, 1e-12);
        let t20 = erlang_truncation(20, 1e-12);
        assert!(crate::payoff::erlang_upper_tail(10, t10) < 1e-12);
        assert!(crate::payoff::erlang_upper_tail(20, t20) < 1e-12);
        assert!(t20 > 60.0);
    }
}
