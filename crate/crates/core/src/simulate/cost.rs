use serde::Serialize;

use super::cloud::ParticleCloud;
use crate::error::{Error, Result};
use crate::measures::neumaier_sum;
use crate::model::CoefficientSet;

/// Monte Carlo estimate over scenarios.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostEstimate {
    pub mean: f64,
    /// Standard error of the mean over scenarios; 0 for a single scenario.
    pub std_error: f64,
    pub per_scenario: Vec<f64>,
}

impl CostEstimate {
    pub fn from_samples(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("cost samples"));
        }
        let n = samples.len() as f64;
        let mean = neumaier_sum(samples.iter().copied()) / n;
        let std_error = if samples.len() < 2 {
            0.0
        } else {
            let var = neumaier_sum(samples.iter().map(|s| (s - mean).powi(2))) / (n - 1.0);
            (var / n).sqrt()
        };
        Ok(Self {
            mean,
            std_error,
            per_scenario: samples,
        })
    }
}

/// Conditional cost of each scenario: the particle average of the running
/// cost plus `g(X_T, L(X_T | G_T))`.
pub fn scenario_costs<C: CoefficientSet + ?Sized>(
    clouds: &[ParticleCloud],
    coeffs: &C,
) -> Result<Vec<f64>> {
    clouds
        .iter()
        .map(|cloud| {
            let mu = cloud.terminal_measure()?;
            let law = coeffs.state_law_stats(&mu);
            let n = cloud.state_dim;
            let per_particle = cloud
                .terminal
                .chunks_exact(n)
                .zip(&cloud.running_cost)
                .map(|(x, r)| r + coeffs.terminal_cost(x, &law));
            Ok(neumaier_sum(per_particle) / cloud.n_particles as f64)
        })
        .collect()
}

/// Mean cost over scenarios with its standard error.
pub fn estimate_cost<C: CoefficientSet + ?Sized>(
    clouds: &[ParticleCloud],
    coeffs: &C,
) -> Result<CostEstimate> {
    if clouds.is_empty() {
        return Err(Error::Empty("clouds"));
    }
    CostEstimate::from_samples(scenario_costs(clouds, coeffs)?)
}

/// Scenario-wise difference `a - b` of two runs sharing random numbers.
pub fn paired_difference(a: &CostEstimate, b: &CostEstimate) -> Result<CostEstimate> {
    if a.per_scenario.len() != b.per_scenario.len() {
        return Err(Error::Dimension {
            expected: a.per_scenario.len(),
            got: b.per_scenario.len(),
        });
    }
    CostEstimate::from_samples(
        a.per_scenario
            .iter()
            .zip(&b.per_scenario)
            .map(|(x, y)| x - y)
            .collect(),
    )
}
