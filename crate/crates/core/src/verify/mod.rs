//! Numerical cross-checks of the LQ solution: the maximum-principle
//! inequality, the adjoint equation, the HJB residual, optimality under
//! perturbations, Fokker-Planck consistency, chattering convergence and the
//! separation of the two noise regimes.
//!
//! Every check returns a [`CheckReport`]; a failed check is a report with
//! `passed == false`, not an error. Errors are reserved for unusable inputs.

mod adjoint;
mod chattering;
mod hjb;
mod monte_carlo;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;

use crate::config::{Perturbation, Provenance, SimSection};
use crate::error::{Error, Result};
use crate::measures::neumaier_sum;
use crate::model::NoiseMode;
use crate::riccati::RiccatiSolution;
use crate::simulate::{ControlRule, InitialLaw, ParticleCloud, Recording, SimSpec};

pub use adjoint::{check_bsde, check_smp, grid_argmin, smp_objective, SmpPoint};
pub use chattering::{
    chattering_discrepancy, check_chattering, two_atom_rule, ChatteringOutcome, ChatteringRow,
};
pub use hjb::{check_hjb, hjb_residual, random_measures, HjbSample};
pub use monte_carlo::{check_fp, check_optimality, compare_noise_modes, FpOutcome, FpRow};

/// Outcome of one check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckReport {
    pub check: String,
    pub passed: bool,
    /// Set when the Monte Carlo budget is too small to decide.
    pub inconclusive: bool,
    pub tolerance: f64,
    /// What `max_residual` measures.
    pub statistic: String,
    /// The statistic must reach the tolerance instead of staying below it.
    pub lower_bound: bool,
    pub samples: usize,
    pub max_residual: f64,
    pub mean_residual: f64,
    pub std_error: Option<f64>,
    pub stats: BTreeMap<String, f64>,
    pub notes: Vec<String>,
    pub provenance: Provenance,
}

impl CheckReport {
    pub fn new(check: &str, tolerance: f64) -> Self {
        Self {
            check: check.to_string(),
            passed: true,
            inconclusive: false,
            tolerance,
            statistic: "max residual".to_string(),
            lower_bound: false,
            samples: 0,
            max_residual: 0.0,
            mean_residual: 0.0,
            std_error: None,
            stats: BTreeMap::new(),
            notes: Vec::new(),
            provenance: Provenance::default(),
        }
    }

    /// Fills the residual summary from absolute residuals and fails the
    /// report if any exceeds the tolerance.
    pub fn with_residuals(mut self, residuals: &[f64]) -> Self {
        self.samples = residuals.len();
        self.max_residual = residuals.iter().fold(0.0, |m: f64, r| m.max(r.abs()));
        self.mean_residual = if residuals.is_empty() {
            0.0
        } else {
            neumaier_sum(residuals.iter().map(|r| r.abs())) / residuals.len() as f64
        };
        if residuals.iter().any(|r| !(r.abs() <= self.tolerance)) {
            self.passed = false;
        }
        self
    }

    /// Relabels the headline statistic.
    pub fn measuring(mut self, statistic: &str, lower_bound: bool) -> Self {
        self.statistic = statistic.to_string();
        self.lower_bound = lower_bound;
        self
    }

    pub fn stat(&mut self, key: &str, value: f64) {
        self.stats.insert(key.to_string(), value);
    }

    /// Records a failed condition.
    pub fn fail(&mut self, note: impl Into<String>) {
        self.passed = false;
        self.notes.push(note.into());
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    /// Exit status for drivers: failed only when conclusive.
    pub fn failed(&self) -> bool {
        !self.passed && !self.inconclusive
    }

    /// One-line summary.
    pub fn summary(&self) -> String {
        let verdict = if self.inconclusive {
            "INCONCLUSIVE"
        } else if self.passed {
            "PASS"
        } else {
            "FAIL"
        };
        let bound = if self.lower_bound {
            "required at least"
        } else {
            "tolerance"
        };
        format!(
            "{verdict} {}: {} {:.3e} ({bound} {:.3e}, {} samples)",
            self.check, self.statistic, self.max_residual, self.tolerance, self.samples
        )
    }
}

fn states_of(cloud: &ParticleCloud, node: usize) -> Result<&[f64]> {
    if let Some(s) = cloud.states_at(node) {
        return Ok(s);
    }
    if node == 0 {
        Ok(&cloud.initial)
    } else if node + 1 == cloud.n_nodes() {
        Ok(&cloud.terminal)
    } else {
        Err(Error::Config(format!(
            "states at node {node} need full recording"
        )))
    }
}

/// `E'[F(x_i, X')]` for every particle `i`: the average of `F(x_i, x_j)` over
/// the cloud at `node`. The initial and terminal nodes are always available;
/// interior nodes need full recording.
pub fn copy_expectation(
    cloud: &ParticleCloud,
    node: usize,
    f: impl Fn(&[f64], &[f64]) -> f64,
) -> Result<Vec<f64>> {
    if cloud.n_particles < 2 {
        return Err(Error::Config(format!(
            "copy expectation needs at least 2 particles, got {}",
            cloud.n_particles
        )));
    }
    if node >= cloud.n_nodes() {
        return Err(Error::Domain(format!(
            "node {node} outside a grid of {} nodes",
            cloud.n_nodes()
        )));
    }
    let d = cloud.state_dim;
    let states = states_of(cloud, node)?;
    let inv = 1.0 / cloud.n_particles as f64;
    Ok(states
        .chunks_exact(d)
        .map(|xi| neumaier_sum(states.chunks_exact(d).map(|xj| f(xi, xj))) * inv)
        .collect())
}

/// The LQ optimal feedback `alpha = -A m - B (x - m)` as a control rule.
pub fn optimal_rule(sol: &RiccatiSolution) -> ControlRule {
    let sol = Arc::new(sol.clone());
    ControlRule::feedback(move |input, x, out| {
        let m = input.stats.mean[0];
        let (a, b) = sol.gains(input.t);
        out[0] = -a * m - b * (x[0] - m);
    })
}

/// The optimal feedback modified by `perturbation`.
pub fn perturbed_rule(sol: &RiccatiSolution, perturbation: &Perturbation) -> ControlRule {
    let sol = Arc::new(sol.clone());
    let p = perturbation.clone();
    let horizon = sol.horizon();
    ControlRule::feedback(move |input, x, out| {
        let m = input.stats.mean[0];
        let (t, scale, offset) = match p {
            Perturbation::Offset { delta } => (input.t, 1.0, delta),
            Perturbation::GainScale { factor } => (input.t, factor, 0.0),
            Perturbation::TimeShift { shift } => ((input.t + shift).clamp(0.0, horizon), 1.0, 0.0),
        };
        let (a, b) = sol.gains(t);
        out[0] = scale * (-a * m - b * (x[0] - m)) + offset;
    })
}

/// Simulation settings from the `sim` section of a configuration.
pub fn sim_spec(sim: &SimSection, horizon: f64, mode: NoiseMode, recording: Recording) -> SimSpec {
    SimSpec {
        n_particles: sim.particles,
        horizon,
        dt: sim.dt,
        noise_dt: sim.noise_dt,
        mode,
        seed: sim.seed,
        recording,
        initial: InitialLaw::Gaussian {
            mean: vec![sim.x0.mean],
            std: vec![sim.x0.std],
        },
        control_box: None,
    }
}

#[cfg(test)]
mod tests;
