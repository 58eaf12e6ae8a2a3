//! Seeded sampling of compound returns.
//!
//! Stream layout: sample `i` belongs to block `i / SAMPLE_BLOCK`. Block `b`
//! is drawn from ChaCha8 seeded with `seed_from_u64(seed)` on stream `b`,
//! and sample `i` starts at word `(i % SAMPLE_BLOCK) * n * 2` of that stream.
//! Each stage consumes one `u64`, mapped to `[0, 1)` as `(u >> 11) * 2^-53`.
//! Any sample can therefore be regenerated on its own, so a run over
//! `c1 + c2` samples equals the concatenation of the runs over `[0, c1)` and
//! `[c1, c1 + c2)`, and blocks can be drawn in parallel.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::payoff::PayoffModel;

/// Samples per independent generator stream.
pub const SAMPLE_BLOCK: u64 = 1024;

const TWO_POW_M53: f64 = 1.0 / (1u64 << 53) as f64;

fn unit_uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * TWO_POW_M53
}

/// Precomputed per-stage sampler for one payoff model.
#[derive(Debug, Clone)]
pub(crate) struct StageSampler {
    kind: Kind,
    m: usize,
    n: u32,
}

#[derive(Debug, Clone)]
enum Kind {
    Discrete { cumulative: Vec<f64>, gross: Vec<Vec<f64>> },
    Uniform { scale: f64 },
    Constant { gross: f64 },
}

impl StageSampler {
    pub(crate) fn new(model: &PayoffModel, n: u32) -> Result<Self> {
        model.validate()?;
        if n == 0 {
            return Err(Error::Domain("decision period n must be >= 1".into()));
        }
        let kind = match model {
            PayoffModel::DiscreteJoint { atoms } => {
                let mut acc = 0.0;
                let cumulative = atoms
                    .iter()
                    .map(|a| {
                        acc += a.prob;
                        acc
                    })
                    .collect();
                let gross = atoms.iter().map(|a| a.payoffs.iter().map(|x| 1.0 + x).collect()).collect();
                Kind::Discrete { cumulative, gross }
            }
            PayoffModel::ContinuousUniform { x_max } => Kind::Uniform { scale: 1.0 + x_max },
            PayoffModel::Deterministic { rate, .. } => Kind::Constant { gross: (1.0 + rate).powi(n as i32) },
        };
        Ok(Self { kind, m: model.m(), n })
    }

    pub(crate) fn m(&self) -> usize {
        self.m
    }

    fn draw(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        match &self.kind {
            Kind::Constant { gross } => out.fill(*gross),
            Kind::Uniform { scale } => {
                out[0] = 1.0;
                let mut r = 1.0;
                for _ in 0..self.n {
                    // 1 - u lies in (0, 1], so every gross return is positive.
                    r *= scale * (1.0 - unit_uniform(rng));
                }
                out[1] = r;
            }
            Kind::Discrete { cumulative, gross } => {
                out.fill(1.0);
                for _ in 0..self.n {
                    let u = unit_uniform(rng);
                    let j = cumulative.iter().position(|c| u < *c).unwrap_or(cumulative.len() - 1);
                    for (r, g) in out.iter_mut().zip(&gross[j]) {
                        *r *= g;
                    }
                }
            }
        }
    }

    /// Visits samples `start..start + count` in index order.
    pub(crate) fn for_each(&self, seed: u64, start: u64, count: u64, mut visit: impl FnMut(&[f64])) {
        let mut buf = vec![0.0; self.m];
        let end = start + count;
        let mut i = start;
        while i < end {
            let block = i / SAMPLE_BLOCK;
            let block_end = ((block + 1) * SAMPLE_BLOCK).min(end);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(block);
            rng.set_word_pos((i % SAMPLE_BLOCK) as u128 * self.n as u128 * 2);
            while i < block_end {
                self.draw(&mut rng, &mut buf);
                visit(&buf);
                i += 1;
            }
        }
    }
}

/// Draws `count` i.i.d. realizations of the compound return vector `R_n`.
pub fn sample_compound(model: &PayoffModel, n: u32, seed: u64, count: usize) -> Result<Vec<Vec<f64>>> {
    sample_compound_range(model, n, seed, 0, count)
}

/// Draws samples `start..start + count` of the stream identified by `seed`.
pub fn sample_compound_range(
    model: &PayoffModel,
    n: u32,
    seed: u64,
    start: u64,
    count: usize,
) -> Result<Vec<Vec<f64>>> {
    if count == 0 {
        return Err(Error::Domain("sample count must be >= 1".into()));
    }
    let sampler = StageSampler::new(model, n)?;
    let mut out = Vec::with_capacity(count);
    sampler.for_each(seed, start, count as u64, |r| out.push(r.to_vec()));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::payoff::PayoffAtom;

    #[test]
    fn deterministic_zero_rate_is_all_ones() {
        let model = PayoffModel::deterministic(0.0, 3).unwrap();
        let s = sample_compound(&model, 5, 1, 100).unwrap();
        assert!(s.iter().flatten().all(|r| *r == 1.0));
    }

    #[test]
    fn same_seed_same_stream() {
        let model = PayoffModel::continuous_uniform(1.0).unwrap();
        let a = sample_compound(&model, 3, 42, 3000).unwrap();
        let b = sample_compound(&model, 3, 42, 3000).unwrap();
        assert_eq!(a, b);
        let c = sample_compound(&model, 3, 43, 3000).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn split_ranges_concatenate() {
        let model = PayoffModel::betting(0.6).unwrap();
        let whole = sample_compound(&model, 4, 9, 2500).unwrap();
        let mut parts = sample_compound_range(&model, 4, 9, 0, 1111).unwrap();
        parts.extend(sample_compound_range(&model, 4, 9, 1111, 1389).unwrap());
        assert_eq!(whole, parts);
    }

    #[test]
    fn discrete_frequencies() {
        let model =
            PayoffModel::discrete(vec![PayoffAtom::new(vec![0.2], 0.25), PayoffAtom::new(vec![-0.2], 0.75)]).unwrap();
        let s = sample_compound(&model, 1, 5, 200_000).unwrap();
        let up = s.iter().filter(|r| r[0] > 1.0).count() as f64 / s.len() as f64;
        assert!((up - 0.25).abs() < 0.005, "{up}");
    }

    #[test]
    fn zero_count_rejected() {
        let model = PayoffModel::betting(0.6).unwrap();
        assert!(sample_compound(&model, 1, 0, 0).is_err());
    }
}
