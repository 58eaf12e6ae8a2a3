//! Monte Carlo estimation of the objective for any payoff model.
//!
//! Samples are grouped into chunks of `batch` consecutive stream indices
//! (chunk boundaries sit at multiples of `batch`). Each chunk is reduced to
//! centred moments of `L`, and chunks are merged strictly in index order, so
//! the estimate does not depend on how many threads computed the chunks.

use rayon::prelude::*;

use super::{AllocationVector, LogMoments, Objective, ObjectiveValue, RiskSpec};
use crate::error::{Error, Result};
use crate::payoff::PayoffModel;
use crate::sampling::StageSampler;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McConfig {
    pub seed: u64,
    pub samples: u64,
    /// Samples per reduction chunk.
    pub batch: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self { seed: 0, samples: 1_000_000, batch: 8192 }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples < 2 {
            return Err(Error::Domain(format!("Monte Carlo needs at least 2 samples, got {}", self.samples)));
        }
        if self.batch == 0 {
            return Err(Error::Domain("Monte Carlo batch must be >= 1".into()));
        }
        Ok(())
    }
}

/// Centred moments of `L` over one chunk, plus raw ratio sums.
#[derive(Debug, Clone, PartialEq)]
struct Chunk {
    count: f64,
    mean: f64,
    m2: f64,
    m3: f64,
    m4: f64,
    ratio: Vec<f64>,
    log_ratio: Vec<f64>,
}

impl Chunk {
    fn merge(&self, other: &Chunk) -> Chunk {
        let (na, nb) = (self.count, other.count);
        let n = na + nb;
        let d = other.mean - self.mean;
        let d2 = d * d;
        let mean = self.mean + d * nb / n;
        let m2 = self.m2 + other.m2 + d2 * na * nb / n;
        let m3 =
            self.m3 + other.m3 + d2 * d * na * nb * (na - nb) / (n * n) + 3.0 * d * (na * other.m2 - nb * self.m2) / n;
        let m4 = self.m4
            + other.m4
            + d2 * d2 * na * nb * (na * na - na * nb + nb * nb) / (n * n * n)
            + 6.0 * d2 * (na * na * other.m2 + nb * nb * self.m2) / (n * n)
            + 4.0 * d * (na * other.m3 - nb * self.m3) / n;
        let add = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + y).collect();
        Chunk {
            count: n,
            mean,
            m2,
            m3,
            m4,
            ratio: add(&self.ratio, &other.ratio),
            log_ratio: add(&self.log_ratio, &other.log_ratio),
        }
    }
}

/// Per-chunk statistics for a range of the sample stream. Two `McStats`
/// over adjacent, `batch`-aligned ranges concatenate (see [`McStats::merge`])
/// into exactly the statistics of the combined range.
#[derive(Debug, Clone, PartialEq)]
pub struct McStats {
    chunks: Vec<Chunk>,
    n: u32,
}

impl McStats {
    /// Statistics of `L = log <K, R_n>` over the sample indices in `range`.
    pub fn collect(
        model: &PayoffModel,
        k: &AllocationVector,
        n: u32,
        seed: u64,
        range: std::ops::Range<u64>,
        batch: u64,
        with_ratios: bool,
    ) -> Result<Self> {
        if batch == 0 {
            return Err(Error::Domain("Monte Carlo batch must be >= 1".into()));
        }
        let sampler = StageSampler::new(model, n)?;
        if k.len() != sampler.m() {
            return Err(Error::DimensionMismatch { expected: sampler.m(), got: k.len() });
        }
        let (start, end) = (range.start, range.end);
        let mut bounds = Vec::new();
        let mut i = start;
        while i < end {
            let next = ((i / batch + 1) * batch).min(end);
            bounds.push((i, next));
            i = next;
        }
        let chunks = bounds
            .into_par_iter()
            .map(|(a, b)| chunk_stats(&sampler, k.as_slice(), seed, a, b - a, with_ratios))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { chunks, n })
    }

    /// Appends `other`, which must continue this range of the stream.
    pub fn merge(mut self, other: McStats) -> Self {
        self.chunks.extend(other.chunks);
        self
    }

    fn pooled(&self) -> Chunk {
        let mut iter = self.chunks.iter();
        let first = iter.next().expect("at least one chunk").clone();
        iter.fold(first, |acc, c| acc.merge(c))
    }

    pub fn count(&self) -> u64 {
        self.chunks.iter().map(|c| c.count as u64).sum()
    }

    /// Estimate with the unbiased sample variance and a delta-method
    /// standard error for `u`.
    pub fn finish(&self, spec: &RiskSpec) -> Result<(ObjectiveValue, f64)> {
        if spec.n != self.n {
            return Err(Error::PeriodMismatch { dist: self.n, spec: spec.n });
        }
        let p = self.pooled();
        let count = p.count;
        if count < 2.0 {
            return Err(Error::Domain("Monte Carlo needs at least 2 samples".into()));
        }
        let var = p.m2 / (count - 1.0);
        let value = ObjectiveValue::assemble(p.mean, var, spec);

        // Influence of one sample on u: a*d - b*(d^2 - s2), d = L - mean.
        let a = 1.0 / spec.n as f64;
        let b = spec.variance_weight();
        let s2 = p.m2 / count;
        let ss = a * a * p.m2 - 2.0 * a * b * p.m3 + b * b * (p.m4 - count * s2 * s2);
        let stderr = (ss.max(0.0) / ((count - 1.0) * count)).sqrt();
        Ok((value, stderr))
    }

    /// Plug-in moments of the empirical distribution.
    pub fn moments(&self) -> LogMoments {
        let p = self.pooled();
        let scale = |v: &[f64]| v.iter().map(|x| x / p.count).collect();
        LogMoments {
            e_log: p.mean,
            e_log_sq: p.m2 / p.count + p.mean * p.mean,
            ratio: scale(&p.ratio),
            log_ratio: scale(&p.log_ratio),
        }
    }
}

fn chunk_stats(
    sampler: &StageSampler,
    k: &[f64],
    seed: u64,
    start: u64,
    count: u64,
    with_ratios: bool,
) -> Result<Chunk> {
    let m = k.len();
    let mut logs = Vec::with_capacity(count as usize);
    let mut ratio = vec![0.0; if with_ratios { m } else { 0 }];
    let mut log_ratio = ratio.clone();
    let mut bad = None;
    sampler.for_each(seed, start, count, |r| {
        let w: f64 = r.iter().zip(k).map(|(r, k)| r * k).sum();
        if !(w > 0.0 && w.is_finite()) {
            bad.get_or_insert(w);
        }
        let l = w.ln();
        if with_ratios {
            for i in 0..m {
                ratio[i] += r[i] / w;
                log_ratio[i] += l * r[i] / w;
            }
        }
        logs.push(l);
    });
    if let Some(value) = bad {
        return Err(Error::NonPositiveReturn { atom: start as usize, value });
    }
    let c = logs.len() as f64;
    let mean = logs.iter().sum::<f64>() / c;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for l in &logs {
        let d = l - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    Ok(Chunk { count: c, mean, m2, m3, m4, ratio, log_ratio })
}

/// Monte Carlo estimate of the objective and its standard error.
pub fn evaluate_mc(
    model: &PayoffModel,
    k: &AllocationVector,
    spec: &RiskSpec,
    mc: &McConfig,
) -> Result<(ObjectiveValue, f64)> {
    mc.validate()?;
    McStats::collect(model, k, spec.n, mc.seed, 0..mc.samples, mc.batch, false)?.finish(spec)
}

/// [`Objective`] over a fixed set of simulated scenarios (common random
/// numbers), i.e. the exact objective of the empirical distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloObjective {
    model: PayoffModel,
    n: u32,
    mc: McConfig,
}

impl MonteCarloObjective {
    pub fn new(model: PayoffModel, n: u32, mc: McConfig) -> Result<Self> {
        model.validate()?;
        mc.validate()?;
        if n == 0 {
            return Err(Error::Domain("decision period n must be >= 1".into()));
        }
        Ok(Self { model, n, mc })
    }
}

impl Objective for MonteCarloObjective {
    fn dim(&self) -> usize {
        self.model.m()
    }

    fn stages(&self) -> u32 {
        self.n
    }

    fn moments_at(&self, k: &AllocationVector, with_ratios: bool) -> Result<LogMoments> {
        let stats =
            McStats::collect(&self.model, k, self.n, self.mc.seed, 0..self.mc.samples, self.mc.batch, with_ratios)?;
        Ok(stats.moments())
    }
}
