use rand::RngExt;
use serde::Serialize;

use super::CheckReport;
use crate::error::{Error, Result};
use crate::flow::{generator_drift, shift_adjoint, LqValue, RelaxedKernel, ValueFunction};
use crate::measures::{AtomSet, EmpiricalMeasure};
use crate::model::{LqModel, NoiseMode};
use crate::riccati::{optimal_control, quadratic_minimizer, RiccatiSolution};
use crate::simulate::{substream, Purpose};

/// A `(t, mu)` pair at which the HJB residual is evaluated.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HjbSample {
    pub t: f64,
    pub mu: EmpiricalMeasure,
}

/// Random times in `[0, T]` and scalar measures with `1..=max_atoms` atoms
/// in `[-3, 3]` and random weights.
pub fn random_measures(
    seed: u64,
    count: usize,
    max_atoms: usize,
    horizon: f64,
) -> Result<Vec<HjbSample>> {
    if max_atoms == 0 {
        return Err(Error::Config("measures need at least one atom".into()));
    }
    let mut rng = substream(seed, 0, Purpose::Verify, 1);
    (0..count)
        .map(|_| {
            let t = rng.random::<f64>() * horizon;
            let k = rng.random_range(1..=max_atoms);
            let atoms = (0..k).map(|_| vec![rng.random_range(-3.0..3.0)]).collect();
            let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let weights = raw.iter().map(|w| w / total).collect();
            Ok(HjbSample {
                t,
                mu: EmpiricalMeasure::new(atoms, weights)?,
            })
        })
        .collect()
}

/// Residual of the HJB equation for the LQ value function at `(t, mu)` and
/// the largest atom-wise gap between the inner minimizer and the optimal
/// feedback.
///
/// The inner minimization over kernels reduces to the quadratic
/// `a E xi^2 + b E[xi X] + c (E xi)^2 + d E xi` with `a = (1 + Gamma beta) / 2`,
/// `b = b3 beta`, `c = Gamma eta / 2` and `d = (b2 s + b3 eta) m`; the residual
/// is `d_t J + A0 J + f + sum_j lambda_j (J(I*_j mu) - J(mu))` at its minimizer.
pub fn hjb_residual(
    sol: &RiccatiSolution,
    model: &LqModel,
    t: f64,
    mu: &EmpiricalMeasure,
) -> Result<(f64, f64)> {
    let p = &sol.params;
    let (beta, eta) = (sol.beta_at(t), sol.eta_at(t));
    let s = beta + eta;
    let gamma = sol.gamma_l2;
    let m = mu.mean()[0];
    let quad = quadratic_minimizer(
        0.5 * (1.0 + gamma * beta),
        p.b3 * beta,
        0.5 * gamma * eta,
        (p.b2 * s + p.b3 * eta) * m,
        mu,
    )?;
    let gap = (0..mu.len())
        .map(|i| (quad.minimizer[i] - optimal_control(sol, t, mu.atom(i)[0], m)).abs())
        .fold(0.0, f64::max);

    let kernel = RelaxedKernel::dirac(1, &quad.minimizer);
    let j = LqValue { sol };
    let drift = generator_drift(&j, t, mu, &kernel, model)?;
    let running: f64 = mu
        .weights()
        .iter()
        .zip(&quad.minimizer)
        .map(|(w, xi)| 0.5 * w * xi * xi)
        .sum();
    let base = j.value(t, mu);
    let mut jumps = 0.0;
    for (k, lambda) in p.jumps.intensities.iter().enumerate() {
        let shifted = shift_adjoint(mu, &kernel, k, model)?;
        jumps += lambda * (j.value(t, &shifted) - base);
    }
    Ok((drift + running + jumps, gap))
}

/// HJB residuals of the common-noise LQ value function at the sampled
/// `(t, mu)` pairs. The default tolerance is `1e-6 + 10 x` the Riccati
/// midpoint residual. Also checks the inner minimizer against the optimal
/// feedback to `1e-10` and the terminal value against `(c/2) Var(mu)`.
pub fn check_hjb(
    sol: &RiccatiSolution,
    samples: &[HjbSample],
    tol: Option<f64>,
) -> Result<CheckReport> {
    if sol.mode != NoiseMode::Common {
        return Err(Error::Config(
            "the HJB check applies to the common-noise solution".into(),
        ));
    }
    let model = LqModel::new(sol.params.clone())?;
    let midpoint = sol.midpoint_residual();
    let tolerance = tol.unwrap_or(1e-6 + 10.0 * midpoint);
    let (mut residuals, mut worst_gap, mut worst_terminal) =
        (Vec::with_capacity(samples.len()), 0.0f64, 0.0f64);
    let j = LqValue { sol };
    let horizon = sol.horizon();
    for sample in samples {
        let (r, gap) = hjb_residual(sol, &model, sample.t, &sample.mu)?;
        residuals.push(r);
        worst_gap = worst_gap.max(gap);
        let m = sample.mu.mean()[0];
        let var = sample.mu.integrate(|x| (x[0] - m) * (x[0] - m));
        let target = 0.5 * sol.params.c * var;
        let terminal = (j.value(horizon, &sample.mu) - target).abs() / (1.0 + target.abs());
        worst_terminal = worst_terminal.max(terminal);
    }
    let mut report = CheckReport::new("hjb", tolerance).with_residuals(&residuals);
    report.stat("riccati_midpoint_residual", midpoint);
    report.stat("minimizer_max_gap", worst_gap);
    report.stat("terminal_max_relative_gap", worst_terminal);
    if !report.passed {
        report.notes.push(format!(
            "HJB residual {:.3e} exceeds {:.3e}",
            report.max_residual, tolerance
        ));
    }
    if worst_gap > 1e-10 {
        report.fail(format!(
            "inner minimizer differs from the optimal feedback by {worst_gap:.3e}"
        ));
    }
    if worst_terminal > 1e-12 {
        report.fail(format!(
            "terminal value differs from (c/2) Var by {worst_terminal:.3e} (relative)"
        ));
    }
    Ok(report)
}
