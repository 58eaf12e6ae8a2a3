//! Maximization of the risk-sensitive objective over the unit simplex.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kkt::{certify, KktReport};
use crate::objective::{AllocationVector, Objective, ObjectiveValue, RiskSpec};

/// Objective values closer than this are treated as ties.
const TIE_TOL: f64 = 1e-12;
/// Consecutive failed line searches before giving up.
const STALL_LIMIT: usize = 50;
const ARMIJO_C: f64 = 1e-4;
const STEP_GROWTH: f64 = 2.0;
const STEP_MAX: f64 = 1e8;
const STEP_MIN: f64 = 1e-20;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerOptions {
    pub max_iters: usize,
    pub step_init: f64,
    /// Step shrink factor on a rejected trial, in `(0, 1)`.
    pub backtrack: f64,
    /// Stop when the step-one projected gradient has max-norm below this.
    pub grad_tol: f64,
    pub kkt_tol: f64,
    /// Number of starting points (the first is the centre or `init`).
    pub restarts: usize,
    /// Seed for the random starting points.
    pub seed: u64,
    pub record_trace: bool,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            max_iters: 10_000,
            step_init: 1.0,
            backtrack: 0.5,
            grad_tol: 1e-10,
            kkt_tol: 1e-6,
            restarts: 5,
            seed: 0,
            record_trace: false,
        }
    }
}

impl OptimizerOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_iters > 0
            && self.step_init > 0.0
            && self.backtrack > 0.0
            && self.backtrack < 1.0
            && self.grad_tol > 0.0
            && self.kkt_tol > 0.0
            && self.restarts > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("invalid optimizer options: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    MaxIterations,
    /// The line search stalled for too many consecutive iterations.
    NoImprovement,
    /// Exhaustive grid search (no iterative stopping rule).
    GridSearch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult {
    pub k_star: AllocationVector,
    pub u_star: f64,
    pub value: ObjectiveValue,
    pub iterations: usize,
    /// Stopping rule met and first-order conditions certified.
    pub converged: bool,
    pub termination: Termination,
    pub kkt: KktReport,
    pub trace: Option<Vec<(usize, f64)>>,
}

/// Euclidean projection onto `{k : k_i >= 0, sum k_i = 1}`.
pub fn project_to_simplex(v: &[f64]) -> AllocationVector {
    assert!(!v.is_empty(), "cannot project an empty vector");
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut shift = 0.0;
    for (j, x) in sorted.iter().enumerate() {
        cumulative += x;
        let candidate = (cumulative - 1.0) / (j + 1) as f64;
        if x - candidate > 0.0 {
            shift = candidate;
        }
    }
    let mut k: Vec<f64> = v.iter().map(|x| (x - shift).max(0.0)).collect();
    let total: f64 = k.iter().sum();
    if total > 0.0 && (total - 1.0).abs() > f64::EPSILON {
        k.iter_mut().for_each(|x| *x /= total);
    }
    AllocationVector::new(k).expect("projection lands on the simplex")
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn step_along(k: &AllocationVector, g: &[f64], step: f64) -> AllocationVector {
    let v: Vec<f64> = k.as_slice().iter().zip(g).map(|(k, g)| k + step * g).collect();
    project_to_simplex(&v)
}

/// Barzilai-Borwein step `|dk|^2 / -<dk, dg>` from the last accepted move,
/// i.e. the inverse curvature along it; `None` where `u` is not concave
/// along the move.
fn secant_step(k: &AllocationVector, next: &AllocationVector, g: &[f64], next_g: &[f64]) -> Option<f64> {
    let dg: Vec<f64> = next_g.iter().zip(g).map(|(a, b)| a - b).collect();
    let mean_dg = dg.iter().sum::<f64>() / dg.len() as f64;
    let dk = next.as_slice().iter().zip(k.as_slice()).map(|(a, b)| a - b);
    let (dk2, curvature) = dk.zip(&dg).fold((0.0, 0.0), |(s, c), (d, g)| (s + d * d, c - d * (g - mean_dg)));
    (curvature > 0.0 && dk2 > 0.0).then(|| dk2 / curvature)
}

struct Run {
    k: AllocationVector,
    value: ObjectiveValue,
    iterations: usize,
    termination: Termination,
    trace: Option<Vec<(usize, f64)>>,
}

fn ascend<O: Objective + ?Sized>(
    obj: &O,
    spec: &RiskSpec,
    opts: &OptimizerOptions,
    start: AllocationVector,
) -> Result<Run> {
    let mut k = start;
    let (mut value, mut grad) = obj.value_and_gradient(&k, spec)?;
    let mut trace = opts.record_trace.then(|| vec![(0, value.u)]);
    let mut step = opts.step_init;
    let mut stalls = 0;
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;

    while iterations < opts.max_iters {
        let unit = step_along(&k, &grad, 1.0);
        let pg_norm = max_abs_diff(unit.as_slice(), k.as_slice());
        if pg_norm <= opts.grad_tol {
            termination = Termination::GradientTolerance;
            break;
        }
        iterations += 1;

        // Below this, changes in u are indistinguishable from round-off and
        // the projected-gradient norm decides instead.
        let slack = 4.0 * f64::EPSILON * value.u.abs().max(1.0);
        let mean_grad = grad.iter().sum::<f64>() / grad.len() as f64;
        let mut trial = step;
        let mut accepted = None;
        while trial >= STEP_MIN {
            let cand = step_along(&k, &grad, trial);
            // The step sums to zero only up to round-off, so pair it with the
            // centred gradient to keep that error out of the ascent.
            let ascent: f64 =
                cand.as_slice().iter().zip(k.as_slice()).zip(&grad).map(|((c, k), g)| (c - k) * (g - mean_grad)).sum();
            if ascent <= 0.0 {
                break;
            }
            let cand_value = obj.value(&cand, spec)?;
            let gain = cand_value.u - value.u;
            if gain > slack && gain >= ARMIJO_C * ascent {
                let (_, g) = obj.value_and_gradient(&cand, spec)?;
                accepted = Some((cand, cand_value, g));
                break;
            }
            if gain >= -slack {
                let (_, g) = obj.value_and_gradient(&cand, spec)?;
                let cand_pg = max_abs_diff(step_along(&cand, &g, 1.0).as_slice(), cand.as_slice());
                if cand_pg < pg_norm {
                    accepted = Some((cand, cand_value, g));
                    break;
                }
            }
            trial *= opts.backtrack;
        }

        match accepted {
            Some((cand, cand_value, g)) => {
                step = secant_step(&k, &cand, &grad, &g).unwrap_or(trial * STEP_GROWTH).clamp(STEP_MIN, STEP_MAX);
                k = cand;
                value = cand_value;
                grad = g;
                stalls = 0;
                if let Some(t) = trace.as_mut() {
                    t.push((iterations, value.u));
                }
            }
            None => {
                stalls += 1;
                step = (trial.max(STEP_MIN) * opts.backtrack).max(STEP_MIN);
                if stalls >= STALL_LIMIT {
                    termination = Termination::NoImprovement;
                    break;
                }
            }
        }
    }
    Ok(Run { k, value, iterations, termination, trace })
}

fn random_simplex_point(rng: &mut ChaCha8Rng, m: usize) -> AllocationVector {
    // Normalized unit exponentials are uniform on the simplex.
    let e: Vec<f64> = (0..m).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let total: f64 = e.iter().sum();
    project_to_simplex(&e.iter().map(|x| x / total).collect::<Vec<_>>())
}

/// Index of the best candidate; ties within [`TIE_TOL`] go to the larger
/// weight on the first (risk-free) alternative, then to the earlier entry.
fn pick_best<'a>(cands: impl Iterator<Item = (&'a AllocationVector, f64)>) -> Option<usize> {
    let cands: Vec<_> = cands.collect();
    let best_u = cands.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    let mut best: Option<usize> = None;
    for (i, (k, u)) in cands.iter().enumerate() {
        if *u < best_u - TIE_TOL {
            continue;
        }
        match best {
            Some(b) if cands[b].0[0] >= k[0] => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Projected gradient ascent with backtracking from several starting points.
///
/// The first start is `init` (or the simplex centre); the remaining
/// `restarts - 1` are uniform random simplex points from `opts.seed`.
pub fn maximize<O: Objective + ?Sized>(
    obj: &O,
    spec: &RiskSpec,
    opts: &OptimizerOptions,
    init: Option<&AllocationVector>,
) -> Result<OptimizationResult> {
    opts.validate()?;
    let m = obj.dim();
    let first = match init {
        Some(k) if k.len() != m => return Err(Error::DimensionMismatch { expected: m, got: k.len() }),
        Some(k) => k.clone(),
        None => AllocationVector::uniform(m),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts = vec![first];
    starts.extend((1..opts.restarts).map(|_| random_simplex_point(&mut rng, m)));

    let runs = starts.into_par_iter().map(|s| ascend(obj, spec, opts, s)).collect::<Result<Vec<_>>>()?;
    let best = pick_best(runs.iter().map(|r| (&r.k, r.value.u))).expect("at least one run");
    let run = runs.into_iter().nth(best).expect("index in range");

    let kkt = certify(obj, &run.k, spec, opts.kkt_tol)?;
    let converged = run.termination == Termination::GradientTolerance && kkt.satisfied;
    Ok(OptimizationResult {
        u_star: run.value.u,
        value: run.value,
        k_star: run.k,
        iterations: run.iterations,
        converged,
        termination: run.termination,
        kkt,
        trace: run.trace,
    })
}

/// Lays out the free coordinates `(K_2, .., K_m)` on a box grid; `K_1` is
/// the remainder and points with `K_1 < 0` are dropped.
fn grid_points(lo: &[f64], hi: &[f64], divisions: usize) -> Vec<Vec<f64>> {
    let axis = |j: usize| -> Vec<f64> {
        (0..=divisions)
            .map(|i| if hi[j] > lo[j] { lo[j] + (hi[j] - lo[j]) * i as f64 / divisions as f64 } else { lo[j] })
            .collect()
    };
    let mut out: Vec<Vec<f64>> = vec![vec![]];
    for j in 0..lo.len() {
        let values = axis(j);
        out = out
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push(*v);
                    q
                })
            })
            .collect();
    }
    out.retain(|p| p.iter().sum::<f64>() <= 1.0 + 1e-12);
    out.dedup();
    out
}

fn from_free(free: &[f64]) -> AllocationVector {
    let rest: f64 = free.iter().sum();
    let mut k = vec![(1.0 - rest).max(0.0)];
    k.extend_from_slice(free);
    project_to_simplex(&k)
}

/// Exhaustive simplex grid search, refined around the incumbent.
///
/// Each level evaluates `points_per_level + 1` values per free coordinate
/// and then shrinks the box to one grid spacing either side of the best
/// point. Serves as a derivative-free oracle for up to three alternatives.
pub fn grid_refine<O: Objective + ?Sized>(
    obj: &O,
    spec: &RiskSpec,
    levels: usize,
    points_per_level: usize,
) -> Result<OptimizationResult> {
    let m = obj.dim();
    if m > 3 {
        return Err(Error::DimensionTooLarge(m));
    }
    if levels == 0 || points_per_level == 0 {
        return Err(Error::Domain("grid search needs levels >= 1 and points_per_level >= 1".into()));
    }
    let free = m - 1;
    let mut lo = vec![0.0; free];
    let mut hi = vec![1.0; free];
    let mut best_k = AllocationVector::vertex(m, 0);
    let mut best_value = obj.value(&best_k, spec)?;
    let mut evaluations = 1;

    for _ in 0..levels {
        let pts = grid_points(&lo, &hi, points_per_level);
        let ks: Vec<AllocationVector> = pts.iter().map(|p| from_free(p)).collect();
        let values = ks.par_iter().map(|k| obj.value(k, spec)).collect::<Result<Vec<_>>>()?;
        evaluations += ks.len();

        let incumbent = std::iter::once((&best_k, best_value.u));
        let cands = incumbent.chain(ks.iter().zip(values.iter().map(|v| v.u)));
        let idx = pick_best(cands).expect("non-empty grid");
        if idx > 0 {
            best_k = ks[idx - 1].clone();
            best_value = values[idx - 1];
        }
        for j in 0..free {
            let spacing = (hi[j] - lo[j]) / points_per_level as f64;
            let centre = best_k[j + 1];
            lo[j] = (centre - spacing).max(0.0);
            hi[j] = (centre + spacing).min(1.0);
        }
        if free == 0 {
            break;
        }
    }

    let kkt = certify(obj, &best_k, spec, OptimizerOptions::default().kkt_tol)?;
    Ok(OptimizationResult {
        u_star: best_value.u,
        value: best_value,
        converged: kkt.satisfied,
        k_star: best_k,
        iterations: evaluations,
        termination: Termination::GridSearch,
        kkt,
        trace: None,
    })
}

/// One row of a risk-aversion sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub rho: f64,
    pub result: Result<OptimizationResult>,
}

/// Solves for every `rho` in order, warm-starting each solve from the
/// previous optimum. A failing row does not stop the sweep.
pub fn sweep_rho<O: Objective + ?Sized>(
    obj: &O,
    template: &RiskSpec,
    rho_values: &[f64],
    opts: &OptimizerOptions,
) -> Result<Vec<SweepRow>> {
    if rho_values.is_empty() {
        return Err(Error::Domain("rho grid is empty".into()));
    }
    let mut warm: Option<AllocationVector> = None;
    let mut rows = Vec::with_capacity(rho_values.len());
    for &rho in rho_values {
        let result = template.with_rho(rho).and_then(|spec| maximize(obj, &spec, opts, warm.as_ref()));
        if let Ok(r) = &result {
            warm = Some(r.k_star.clone());
        }
        rows.push(SweepRow { rho, result });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::payoff::{
        build_discrete_compound, CompoundReturnDistribution, PayoffModel, ReturnAtom, DEFAULT_ATOM_CAP,
    };
    use approx::assert_relative_eq;

    fn betting(p: f64) -> CompoundReturnDistribution {
        build_discrete_compound(&PayoffModel::betting(p).unwrap(), 1, DEFAULT_ATOM_CAP).unwrap()
    }

    #[test]
    fn projection_cases() {
        let inside = project_to_simplex(&[0.2, 0.3, 0.5]);
        assert_eq!(inside.as_slice(), &[0.2, 0.3, 0.5]);
        assert_eq!(project_to_simplex(&[2.0, 0.0]).as_slice(), &[1.0, 0.0]);
        assert_eq!(project_to_simplex(&[0.8, 0.8]).as_slice(), &[0.5, 0.5]);
        assert_eq!(project_to_simplex(&[-3.0]).as_slice(), &[1.0]);
        let p = project_to_simplex(&[-1.0, 0.4, 0.1]);
        assert_relative_eq!(p[1], 0.65, epsilon = 1e-15);
        assert_relative_eq!(p[2], 0.35, epsilon = 1e-15);
        assert_eq!(p[0], 0.0);
    }

    #[test]
    fn kelly_by_gradient_ascent() {
        let d = betting(0.6);
        let r = maximize(&d, &RiskSpec::new(0.0, 1).unwrap(), &OptimizerOptions::default(), None).unwrap();
        assert!(r.converged, "{r:?}");
        assert!((r.k_star[1] - 0.4).abs() <= 1e-6);
    }

    #[test]
    fn risk_aversion_shrinks_bet() {
        let d = betting(0.6);
        let r = maximize(&d, &RiskSpec::new(1.0, 1).unwrap(), &OptimizerOptions::default(), None).unwrap();
        assert!(r.converged);
        assert!((r.k_star[1] - 0.2035).abs() <= 1e-3);
    }

    #[test]
    fn trace_is_monotone() {
        let d = betting(0.65);
        let opts = OptimizerOptions { record_trace: true, restarts: 1, ..Default::default() };
        let r = maximize(&d, &RiskSpec::new(0.3, 1).unwrap(), &opts, Some(&AllocationVector::vertex(2, 0))).unwrap();
        let trace = r.trace.unwrap();
        assert!(trace.len() > 1);
        for w in trace.windows(2) {
            assert!(w[1].1 >= w[0].1 - 1e-14);
        }
    }

    #[test]
    fn degenerate_model_returns_risk_free_vertex() {
        let d =
            CompoundReturnDistribution::new(vec![ReturnAtom { returns: vec![1.0, 1.0, 1.0], prob: 1.0 }], 1).unwrap();
        let spec = RiskSpec::new(0.5, 1).unwrap();
        let g = grid_refine(&d, &spec, 3, 10).unwrap();
        assert_eq!(g.k_star.as_slice(), &[1.0, 0.0, 0.0]);
        assert_eq!(g.u_star, 0.0);
        let r = maximize(&d, &spec, &OptimizerOptions::default(), None).unwrap();
        assert!(r.converged);
        assert_eq!(r.u_star, 0.0);
    }

    #[test]
    fn grid_matches_gradient_ascent() {
        let d = betting(0.75);
        let spec = RiskSpec::new(1.0, 1).unwrap();
        let g = grid_refine(&d, &spec, 8, 20).unwrap();
        assert!((g.k_star[1] - 0.5643).abs() <= 1e-3);
        let r = maximize(&d, &spec, &OptimizerOptions::default(), None).unwrap();
        assert!((g.k_star[1] - r.k_star[1]).abs() <= 1e-4);
    }

    #[test]
    fn grid_rejects_large_dimension() {
        let d = CompoundReturnDistribution::new(vec![ReturnAtom { returns: vec![1.0; 4], prob: 1.0 }], 1).unwrap();
        let spec = RiskSpec::new(0.0, 1).unwrap();
        assert_eq!(grid_refine(&d, &spec, 2, 5).unwrap_err(), Error::DimensionTooLarge(4));
    }

    #[test]
    fn single_entry_sweep_is_kelly() {
        let d = betting(0.6);
        let rows = sweep_rho(&d, &RiskSpec::new(0.0, 1).unwrap(), &[0.0], &OptimizerOptions::default()).unwrap();
        assert_eq!(rows.len(), 1);
        let r = rows[0].result.as_ref().unwrap();
        assert!((r.k_star[1] - 0.4).abs() <= 1e-6);
    }

    #[test]
    fn sweep_keeps_going_after_bad_row() {
        let d = betting(0.6);
        let rows =
            sweep_rho(&d, &RiskSpec::new(0.0, 1).unwrap(), &[0.0, -1.0, 0.5], &OptimizerOptions::default()).unwrap();
        assert!(rows[0].result.is_ok());
        assert!(rows[1].result.is_err());
        assert!(rows[2].result.is_ok());
        assert!(sweep_rho(&d, &RiskSpec::new(0.0, 1).unwrap(), &[], &OptimizerOptions::default()).is_err());
    }

    #[test]
    fn tie_break_prefers_risk_free_weight() {
        let a = AllocationVector::two_asset(0.3).unwrap();
        let b = AllocationVector::two_asset(0.1).unwrap();
        let c = AllocationVector::two_asset(0.0).unwrap();
        let idx = pick_best([(&a, 1.0), (&b, 1.0 - 1e-13), (&c, 0.5)].into_iter());
        assert_eq!(idx, Some(1));
    }

    #[test]
    fn options_validation() {
        let bad = OptimizerOptions { backtrack: 1.0, ..Default::default() };
        let d = betting(0.6);
        assert!(maximize(&d, &RiskSpec::new(0.0, 1).unwrap(), &bad, None).is_err());
    }
}
