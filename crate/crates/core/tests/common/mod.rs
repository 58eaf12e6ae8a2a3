#![allow(dead_code)]

use proptest::prelude::*;
use rskelly::{AllocationVector, PayoffAtom, PayoffModel};

/// Joint per-stage payoffs with `atoms` outcomes over `m` alternatives.
pub fn discrete_model(max_atoms: usize, max_m: usize) -> impl Strategy<Value = PayoffModel> {
    (1..=max_atoms, 1..=max_m)
        .prop_flat_map(|(a, m)| {
            (prop::collection::vec(prop::collection::vec(-0.9f64..2.0, m), a), prop::collection::vec(0.05f64..1.0, a))
        })
        .prop_map(|(payoffs, weights)| {
            let total: f64 = weights.iter().sum();
            let atoms = payoffs.into_iter().zip(weights).map(|(x, w)| PayoffAtom::new(x, w / total)).collect();
            PayoffModel::discrete(atoms).expect("generated model is valid")
        })
}

/// Simplex point from positive weights; `floor` keeps it off the boundary.
pub fn simplex_point(raw: &[f64], floor: f64) -> AllocationVector {
    let total: f64 = raw.iter().map(|x| x + floor).sum();
    let mut k: Vec<f64> = raw.iter().map(|x| (x + floor) / total).collect();
    let drift: f64 = 1.0 - k.iter().sum::<f64>();
    k[0] += drift;
    AllocationVector::new(k).expect("normalized weights lie on the simplex")
}

pub fn betting(p: f64, n: u32) -> rskelly::CompoundReturnDistribution {
    rskelly::build_discrete_compound(&PayoffModel::betting(p).unwrap(), n, rskelly::DEFAULT_ATOM_CAP).unwrap()
}

/// Kolmogorov–Smirnov distance between sorted samples and a CDF.
pub fn ks_distance(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    sorted.iter().enumerate().fold(0.0, |d: f64, (i, x)| {
        let f = cdf(*x);
        d.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs())
    })
}
