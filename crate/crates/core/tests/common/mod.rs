#![allow(dead_code)]

use mfc_core::measures::{AtomSet, EmpiricalMeasure};
use mfc_core::model::{JumpSpec, LQParams};
use rand::{Rng, RngExt};

/// Lattice step of the brute-force oracle.
pub const LATTICE: f64 = 1e-3;

pub fn lq(b1: f64, b2: f64, b3: f64, sigma: f64, c: f64, jumps: JumpSpec) -> LQParams {
    LQParams {
        b1,
        b2,
        b3,
        sigma,
        c,
        horizon: 1.0,
        jumps,
    }
}

pub fn generic() -> LQParams {
    lq(0.2, 0.3, 1.0, 0.4, 1.0, JumpSpec::single(2.0, 0.5).unwrap())
}

/// Scalar measure with at most `max_atoms` atoms on the oracle lattice in
/// `[-2, 2]` and random weights.
pub fn lattice_measure<R: Rng>(rng: &mut R, max_atoms: usize) -> EmpiricalMeasure {
    let k = rng.random_range(1..=max_atoms);
    let atoms = (0..k)
        .map(|_| vec![rng.random_range(-2000i64..=2000) as f64 * LATTICE])
        .collect();
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    EmpiricalMeasure::new(atoms, raw.iter().map(|w| w / total).collect()).unwrap()
}

/// Brute-force `sup { int f d(a - b) : |f| <= 1, Lip(f) <= 1 }` for scalar
/// measures with atoms on the lattice.
///
/// The sup is taken over functions that are linear between consecutive
/// atoms and take lattice values at the atoms, by dynamic programming over
/// the sorted atoms. On the lattice this contains an optimal vertex of the
/// underlying linear program, so the value is exact up to rounding.
pub fn fm_brute_force(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> f64 {
    let to_index = |x: f64| (x / LATTICE).round() as i64;
    let mut signed: std::collections::BTreeMap<i64, f64> = std::collections::BTreeMap::new();
    for i in 0..a.len() {
        *signed.entry(to_index(a.atom(i)[0])).or_default() += a.weights()[i];
    }
    for i in 0..b.len() {
        *signed.entry(to_index(b.atom(i)[0])).or_default() -= b.weights()[i];
    }
    let levels = (1.0 / LATTICE).round() as i64;
    let states = (2 * levels + 1) as usize;
    let value = |v: usize| (v as i64 - levels) as f64 * LATTICE;

    let mut best: Option<Vec<f64>> = None;
    let mut prev_pos = 0i64;
    for (&pos, &w) in &signed {
        let next: Vec<f64> = match &best {
            None => (0..states).map(|v| w * value(v)).collect(),
            Some(prev) => {
                let d = (pos - prev_pos) as usize;
                (0..states)
                    .map(|v| {
                        let lo = v.saturating_sub(d);
                        let hi = (v + d).min(states - 1);
                        let reach = prev[lo..=hi]
                            .iter()
                            .copied()
                            .fold(f64::NEG_INFINITY, f64::max);
                        reach + w * value(v)
                    })
                    .collect()
            }
        };
        best = Some(next);
        prev_pos = pos;
    }
    best.map(|b| b.into_iter().fold(f64::NEG_INFINITY, f64::max))
        .unwrap_or(0.0)
}

/// Closed-form `beta` for `sigma = 0`, `Gamma = 0`: `c / (1 + b3^2 c (T - t))`.
pub fn beta_no_noise(b3: f64, c: f64, horizon: f64, t: f64) -> f64 {
    c / (1.0 + b3 * b3 * c * (horizon - t))
}
