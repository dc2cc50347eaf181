use serde::Serialize;

use super::{aggregate_coeffs, shift_adjoint, RelaxedKernel};
use crate::error::{Error, Result};
use crate::measures::{neumaier_sum, AtomSet, EmpiricalMeasure};
use crate::model::{CoefficientSet, NoiseMode};
use crate::riccati::RiccatiSolution;
use crate::simulate::ParticleCloud;

/// A function `J(t, mu)` on time and state laws with optional derivatives.
pub trait ValueFunction {
    fn value(&self, t: f64, mu: &EmpiricalMeasure) -> f64;

    fn time_derivative(&self, _t: f64, _mu: &EmpiricalMeasure) -> Result<f64> {
        Err(Error::MissingEvaluator("time_derivative"))
    }
    /// `d_mu J(t, mu)(x)`, length `n`.
    fn measure_derivative(
        &self,
        _t: f64,
        _mu: &EmpiricalMeasure,
        _x: &[f64],
        _out: &mut [f64],
    ) -> Result<()> {
        Err(Error::MissingEvaluator("measure_derivative"))
    }
    /// `d_x d_mu J(t, mu)(x)`, row-major `n x n`.
    fn measure_derivative_dx(
        &self,
        _t: f64,
        _mu: &EmpiricalMeasure,
        _x: &[f64],
        _out: &mut [f64],
    ) -> Result<()> {
        Err(Error::MissingEvaluator("measure_derivative_dx"))
    }
}

/// `J(t, mu) = (beta_t <x^2, mu> + eta_t <x, mu>^2) / 2`. The time derivative
/// is a finite difference of the tabulated solution.
#[derive(Clone, Copy, Debug)]
pub struct LqValue<'a> {
    pub sol: &'a RiccatiSolution,
}

fn moments(mu: &EmpiricalMeasure) -> (f64, f64) {
    let w = mu.weights();
    let m1 = neumaier_sum((0..mu.len()).map(|i| w[i] * mu.atom(i)[0]));
    let m2 = neumaier_sum((0..mu.len()).map(|i| w[i] * mu.atom(i)[0] * mu.atom(i)[0]));
    (m1, m2)
}

impl ValueFunction for LqValue<'_> {
    fn value(&self, t: f64, mu: &EmpiricalMeasure) -> f64 {
        let (m1, m2) = moments(mu);
        0.5 * (self.sol.beta_at(t) * m2 + self.sol.eta_at(t) * m1 * m1)
    }

    fn time_derivative(&self, t: f64, mu: &EmpiricalMeasure) -> Result<f64> {
        let (db, de) = self.sol.derivative_fd(t);
        let (m1, m2) = moments(mu);
        Ok(0.5 * (db * m2 + de * m1 * m1))
    }

    fn measure_derivative(
        &self,
        t: f64,
        mu: &EmpiricalMeasure,
        x: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        let (m1, _) = moments(mu);
        out[0] = self.sol.beta_at(t) * x[0] + self.sol.eta_at(t) * m1;
        Ok(())
    }

    fn measure_derivative_dx(
        &self,
        t: f64,
        _mu: &EmpiricalMeasure,
        _x: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        out[0] = self.sol.beta_at(t);
        Ok(())
    }
}

/// A jump that fires at a node, described by the pre-jump law and kernel.
#[derive(Clone, Debug)]
pub struct PathJump {
    pub mark: usize,
    pub mu: EmpiricalMeasure,
    pub kernel: RelaxedKernel,
}

/// Post-jump law and kernel at a grid node, with the jumps that led to it.
#[derive(Clone, Debug)]
pub struct PathNode {
    pub t: f64,
    pub mu: EmpiricalMeasure,
    pub kernel: RelaxedKernel,
    pub jumps: Vec<PathJump>,
}

/// Measure path of a strict common-noise cloud simulated with full recording.
pub fn measure_path(cloud: &ParticleCloud) -> Result<Vec<PathNode>> {
    if cloud.relaxed {
        return Err(Error::Kind("measure path needs a strict cloud"));
    }
    if cloud.mode != NoiseMode::Common {
        return Err(Error::Kind("measure path needs a common-noise cloud"));
    }
    if !cloud.has_trajectories() {
        return Err(Error::Config("measure path needs full recording".into()));
    }
    let (n, m) = (cloud.state_dim, cloud.control_dim);
    let mut nodes: Vec<PathNode> = (0..cloud.n_nodes())
        .map(|k| {
            Ok(PathNode {
                t: cloud.grid.times[k],
                mu: EmpiricalMeasure::uniform(n, cloud.states_at(k).expect("recorded").to_vec())?,
                kernel: RelaxedKernel::dirac(m, cloud.controls_at(k).expect("recorded")),
                jumps: Vec::new(),
            })
        })
        .collect::<Result<_>>()?;
    for rec in &cloud.jumps {
        nodes[rec.node].jumps.push(PathJump {
            mark: rec.mark,
            mu: EmpiricalMeasure::uniform(n, rec.pre_states.clone())?,
            kernel: RelaxedKernel::dirac(m, &rec.pre_controls),
        });
    }
    Ok(nodes)
}

/// Increment of `J` over one step against the Ito-formula prediction.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ItoStep {
    pub t: f64,
    pub dt: f64,
    pub observed: f64,
    /// `(d_t J + <A0 pairing of d_mu J>) dt` at the left endpoint.
    pub drift: f64,
    /// Sum of `J(I* mu) - J(mu)` over the jumps at the right endpoint.
    pub jump: f64,
    pub residual: f64,
}

/// Generator drift of `J` at `(t, mu)`: `d_t J + int (b^ - <gamma^, lambda>) . d_mu J
/// + tr(Sigma^ d_x d_mu J) / 2 dmu`.
pub fn generator_drift<J: ValueFunction + ?Sized, C: CoefficientSet + ?Sized>(
    j: &J,
    t: f64,
    mu: &EmpiricalMeasure,
    kernel: &RelaxedKernel,
    coeffs: &C,
) -> Result<f64> {
    let agg = aggregate_coeffs(mu, kernel, coeffs)?;
    let n = mu.dim();
    let lambdas = &coeffs.jumps().intensities;
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n * n];
    let mut terms = Vec::with_capacity(mu.len() + 1);
    terms.push(j.time_derivative(t, mu)?);
    for i in 0..mu.len() {
        let x = mu.atom(i);
        j.measure_derivative(t, mu, x, &mut grad)?;
        j.measure_derivative_dx(t, mu, x, &mut hess)?;
        let mut acc = 0.0;
        for c in 0..n {
            let comp: f64 = lambdas
                .iter()
                .enumerate()
                .map(|(k, l)| l * agg.jump_at(i, k)[c])
                .sum();
            acc += (agg.drift_at(i)[c] - comp) * grad[c];
        }
        acc += 0.5
            * agg
                .covariance_at(i)
                .iter()
                .zip(&hess)
                .map(|(a, b)| a * b)
                .sum::<f64>();
        terms.push(mu.weights()[i] * acc);
    }
    Ok(neumaier_sum(terms))
}

/// Per-step residuals `dJ - drift dt - jumps` along a measure path.
pub fn ito_residual<J: ValueFunction + ?Sized, C: CoefficientSet + ?Sized>(
    j: &J,
    path: &[PathNode],
    coeffs: &C,
) -> Result<Vec<ItoStep>> {
    path.windows(2)
        .map(|w| {
            let (a, b) = (&w[0], &w[1]);
            let dt = b.t - a.t;
            let drift = generator_drift(j, a.t, &a.mu, &a.kernel, coeffs)? * dt;
            let mut jump = 0.0;
            for ev in &b.jumps {
                let shifted = shift_adjoint(&ev.mu, &ev.kernel, ev.mark, coeffs)?;
                jump += j.value(b.t, &shifted) - j.value(b.t, &ev.mu);
            }
            let observed = j.value(b.t, &b.mu) - j.value(a.t, &a.mu);
            Ok(ItoStep {
                t: a.t,
                dt,
                observed,
                drift,
                jump,
                residual: observed - drift - jump,
            })
        })
        .collect()
}
