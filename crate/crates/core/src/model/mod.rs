//! Model coefficients `(b, sigma, gamma, f, g)`, the built-in LQ family and
//! the strict and relaxed Hamiltonians.

mod hamiltonian;
mod lq;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{EmpiricalMeasure, JointEmpiricalMeasure};

pub use hamiltonian::{
    delta_hamiltonian_dxp, delta_hamiltonian_relaxed, delta_hamiltonian_strict,
    delta_hamiltonian_with_stats, hamiltonian_dx, hamiltonian_relaxed, hamiltonian_strict,
    hamiltonian_with_stats, AdjointTriplet,
};
pub use lq::{LQParams, LqModel};

/// Whether the Poisson random measure is shared by all particles or drawn
/// independently per particle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    #[default]
    Common,
    Idiosyncratic,
}

impl std::fmt::Display for NoiseMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NoiseMode::Common => "common",
            NoiseMode::Idiosyncratic => "idiosyncratic",
        })
    }
}

/// Finite mark set of the Poisson random measure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct JumpSpec {
    pub marks: Vec<f64>,
    pub intensities: Vec<f64>,
    /// `gamma(z_j)` for the LQ family.
    pub gamma_values: Vec<f64>,
}

impl JumpSpec {
    pub fn new(marks: Vec<f64>, intensities: Vec<f64>, gamma_values: Vec<f64>) -> Result<Self> {
        if marks.len() != intensities.len() || marks.len() != gamma_values.len() {
            return Err(Error::Config(format!(
                "jump spec lists differ in length: {} marks, {} intensities, {} gammas",
                marks.len(),
                intensities.len(),
                gamma_values.len()
            )));
        }
        if let Some(l) = intensities.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::Config(format!(
                "intensity {l} must be finite and positive"
            )));
        }
        if marks.iter().chain(&gamma_values).any(|v| !v.is_finite()) {
            return Err(Error::Config(
                "marks and gamma values must be finite".into(),
            ));
        }
        Ok(Self {
            marks,
            intensities,
            gamma_values,
        })
    }

    pub fn none() -> Self {
        Self::default()
    }

    /// One mark with intensity `lambda` and jump coefficient `gamma`.
    pub fn single(lambda: f64, gamma: f64) -> Result<Self> {
        Self::new(vec![1.0], vec![lambda], vec![gamma])
    }

    pub fn len(&self) -> usize {
        self.marks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.marks.is_empty()
    }

    /// `lambda(Z)`.
    pub fn total_intensity(&self) -> f64 {
        self.intensities.iter().sum()
    }

    /// `sum_j gamma_j^2 lambda_j`.
    pub fn gamma_l2(&self) -> f64 {
        self.gamma_values
            .iter()
            .zip(&self.intensities)
            .map(|(g, l)| g * g * l)
            .sum()
    }

    /// `sum_j gamma_j lambda_j`.
    pub fn gamma_l1(&self) -> f64 {
        self.gamma_values
            .iter()
            .zip(&self.intensities)
            .map(|(g, l)| g * l)
            .sum()
    }

    /// Copy with every `gamma_j` set to zero.
    pub fn without_jumps(&self) -> Self {
        Self {
            gamma_values: vec![0.0; self.len()],
            ..self.clone()
        }
    }
}

/// State, control and Brownian dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub state: usize,
    pub control: usize,
    pub noise: usize,
}

/// Finite summary of a law through which the coefficients see the measure
/// argument. For the LQ family this is `[E x, E u]` (joint) or `[E x]`
/// (state law).
pub type LawStats = Vec<f64>;

fn missing<T>(name: &'static str) -> Result<T> {
    Err(Error::MissingEvaluator(name))
}

/// Coefficients of an extended mean-field control problem.
///
/// Measure arguments enter through [`LawStats`] computed once per law, which
/// keeps particle updates linear in the cloud size. Out-parameters are
/// row-major; the diffusion block is `state x noise`. The derivative
/// evaluators are optional and default to a configuration error.
pub trait CoefficientSet: Send + Sync {
    fn dims(&self) -> Dims;
    fn jumps(&self) -> &JumpSpec;

    /// Statistics of a strict joint law `rho`.
    fn law_stats(&self, rho: &JointEmpiricalMeasure) -> Result<LawStats>;
    /// Statistics of a state law `mu`, as seen by the terminal cost.
    fn state_law_stats(&self, mu: &EmpiricalMeasure) -> LawStats;

    fn drift(&self, x: &[f64], law: &[f64], u: &[f64], out: &mut [f64]);
    fn diffusion(&self, x: &[f64], law: &[f64], u: &[f64], out: &mut [f64]);
    fn jump(&self, x: &[f64], law: &[f64], u: &[f64], mark: usize, out: &mut [f64]);
    fn running_cost(&self, x: &[f64], law: &[f64], u: &[f64]) -> f64;
    fn terminal_cost(&self, x: &[f64], law: &[f64]) -> f64;

    /// `d_x b`, `state x state`.
    fn drift_dx(&self, _x: &[f64], _law: &[f64], _u: &[f64], _out: &mut [f64]) -> Result<()> {
        missing("drift_dx")
    }
    /// `d_x sigma`, laid out as `[k][i][l] = d sigma_il / d x_k`.
    fn diffusion_dx(&self, _x: &[f64], _law: &[f64], _u: &[f64], _out: &mut [f64]) -> Result<()> {
        missing("diffusion_dx")
    }
    /// `d_x gamma(., z_j)`, `state x state`.
    fn jump_dx(
        &self,
        _x: &[f64],
        _law: &[f64],
        _u: &[f64],
        _mark: usize,
        _out: &mut [f64],
    ) -> Result<()> {
        missing("jump_dx")
    }
    fn running_cost_dx(
        &self,
        _x: &[f64],
        _law: &[f64],
        _u: &[f64],
        _out: &mut [f64],
    ) -> Result<()> {
        missing("running_cost_dx")
    }
    fn terminal_cost_dx(&self, _x: &[f64], _law: &[f64], _out: &mut [f64]) -> Result<()> {
        missing("terminal_cost_dx")
    }

    /// Linear derivative `delta b / delta rho (rho)(x, u)` at `(x', u')`.
    fn drift_delta(
        &self,
        _x: &[f64],
        _law: &[f64],
        _u: &[f64],
        _xp: &[f64],
        _up: &[f64],
        _out: &mut [f64],
    ) -> Result<()> {
        missing("drift_delta")
    }
    fn diffusion_delta(
        &self,
        _x: &[f64],
        _law: &[f64],
        _u: &[f64],
        _xp: &[f64],
        _up: &[f64],
        _out: &mut [f64],
    ) -> Result<()> {
        missing("diffusion_delta")
    }
    #[allow(clippy::too_many_arguments)]
    fn jump_delta(
        &self,
        _x: &[f64],
        _law: &[f64],
        _u: &[f64],
        _mark: usize,
        _xp: &[f64],
        _up: &[f64],
        _out: &mut [f64],
    ) -> Result<()> {
        missing("jump_delta")
    }
    fn running_cost_delta(
        &self,
        _x: &[f64],
        _law: &[f64],
        _u: &[f64],
        _xp: &[f64],
        _up: &[f64],
    ) -> Result<f64> {
        missing("running_cost_delta")
    }
    /// `delta g / delta mu (mu)(x)` at `x'`.
    fn terminal_cost_delta(&self, _x: &[f64], _law: &[f64], _xp: &[f64]) -> Result<f64> {
        missing("terminal_cost_delta")
    }

    /// `d_{x'}` of the drift kernel, `state x state` with row = component of b.
    fn drift_delta_dxp(
        &self,
        _x: &[f64],
        _law: &[f64],
        _u: &[f64],
        _xp: &[f64],
        _up: &[f64],
        _out: &mut [f64],
    ) -> Result<()> {
        missing("drift_delta_dxp")
    }
    /// `d_{x'}` of the diffusion kernel, laid out like [`CoefficientSet::diffusion_dx`].
    fn diffusion_delta_dxp(
        &self,
        _x: &[f64],
        _law: &[f64],
        _u: &[f64],
        _xp: &[f64],
        _up: &[f64],
        _out: &mut [f64],
    ) -> Result<()> {
        missing("diffusion_delta_dxp")
    }
    #[allow(clippy::too_many_arguments)]
    fn jump_delta_dxp(
        &self,
        _x: &[f64],
        _law: &[f64],
        _u: &[f64],
        _mark: usize,
        _xp: &[f64],
        _up: &[f64],
        _out: &mut [f64],
    ) -> Result<()> {
        missing("jump_delta_dxp")
    }
    fn running_cost_delta_dxp(
        &self,
        _x: &[f64],
        _law: &[f64],
        _u: &[f64],
        _xp: &[f64],
        _up: &[f64],
        _out: &mut [f64],
    ) -> Result<()> {
        missing("running_cost_delta_dxp")
    }
}
