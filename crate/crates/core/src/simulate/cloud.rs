use std::io::{self, Write};

use serde::Serialize;

use super::path::{PoissonPath, TimeGrid};
use super::rule::CloudStats;
use crate::error::Result;
use crate::measures::{EmpiricalMeasure, JointEmpiricalMeasure};
use crate::model::NoiseMode;

/// Jump realizations driving one scenario.
#[derive(Clone, Debug, Serialize)]
pub enum NoisePaths {
    /// One path shared by the whole cloud.
    Common(PoissonPath),
    /// One path per particle.
    Idiosyncratic(Vec<PoissonPath>),
}

impl NoisePaths {
    pub fn mode(&self) -> NoiseMode {
        match self {
            NoisePaths::Common(_) => NoiseMode::Common,
            NoisePaths::Idiosyncratic(_) => NoiseMode::Idiosyncratic,
        }
    }
}

/// What a simulation keeps besides the summary statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Recording {
    /// States and controls of every particle at every node.
    Full,
    #[default]
    Summary,
}

/// Cloud snapshot taken just before a jump is applied.
#[derive(Clone, Debug, Serialize)]
pub struct JumpRecord {
    pub node: usize,
    pub time: f64,
    pub mark: usize,
    /// Jumping particle in idiosyncratic mode.
    pub owner: Option<usize>,
    /// Pre-jump states: every particle in common mode, the owner otherwise.
    pub pre_states: Vec<f64>,
    /// Controls `alpha_{t-}` matching `pre_states` (the q-mean for relaxed rules).
    pub pre_controls: Vec<f64>,
    pub pre_mean: Vec<f64>,
    pub post_mean: Vec<f64>,
    pub pre_control_mean: Vec<f64>,
}

/// `N` coupled particle trajectories for one scenario.
#[derive(Clone, Debug, Serialize)]
pub struct ParticleCloud {
    pub scenario: u64,
    pub seed: u64,
    pub mode: NoiseMode,
    pub relaxed: bool,
    pub state_dim: usize,
    pub control_dim: usize,
    pub n_particles: usize,
    pub grid: TimeGrid,
    pub paths: NoisePaths,
    pub initial: Vec<f64>,
    pub terminal: Vec<f64>,
    /// Left-endpoint running cost per particle.
    pub running_cost: Vec<f64>,
    /// `[node][component]` post-jump state means.
    pub node_mean: Vec<f64>,
    pub node_second: Vec<f64>,
    pub node_control_mean: Vec<f64>,
    pub jumps: Vec<JumpRecord>,
    /// `[node][particle][component]`, present under [`Recording::Full`].
    #[serde(skip)]
    pub states: Option<Vec<f64>>,
    #[serde(skip)]
    pub controls: Option<Vec<f64>>,
}

impl ParticleCloud {
    pub fn n_nodes(&self) -> usize {
        self.grid.len()
    }

    pub fn mean_at(&self, node: usize) -> &[f64] {
        &self.node_mean[node * self.state_dim..(node + 1) * self.state_dim]
    }

    pub fn control_mean_at(&self, node: usize) -> &[f64] {
        &self.node_control_mean[node * self.control_dim..(node + 1) * self.control_dim]
    }

    pub fn has_trajectories(&self) -> bool {
        self.states.is_some()
    }

    /// All particle states at `node`; needs full recording.
    pub fn states_at(&self, node: usize) -> Option<&[f64]> {
        let span = self.n_particles * self.state_dim;
        self.states
            .as_ref()
            .map(|s| &s[node * span..(node + 1) * span])
    }

    pub fn controls_at(&self, node: usize) -> Option<&[f64]> {
        let span = self.n_particles * self.control_dim;
        self.controls
            .as_ref()
            .map(|s| &s[node * span..(node + 1) * span])
    }

    pub fn state_measure(&self, node: usize) -> Option<Result<EmpiricalMeasure>> {
        self.states_at(node)
            .map(|s| EmpiricalMeasure::uniform(self.state_dim, s.to_vec()))
    }

    pub fn joint_at(&self, node: usize) -> Option<Result<JointEmpiricalMeasure>> {
        let (s, u) = (self.states_at(node)?, self.controls_at(node)?);
        Some(JointEmpiricalMeasure::strict_uniform(
            self.state_dim,
            s.to_vec(),
            self.control_dim,
            u.to_vec(),
        ))
    }

    pub fn terminal_measure(&self) -> Result<EmpiricalMeasure> {
        EmpiricalMeasure::uniform(self.state_dim, self.terminal.clone())
    }

    pub fn terminal_stats(&self) -> CloudStats {
        CloudStats::from_states(&self.terminal, self.state_dim)
    }

    /// Sorted event times seen by particle `i`.
    pub fn jump_times_of(&self, particle: usize) -> Vec<f64> {
        match &self.paths {
            NoisePaths::Common(p) => p.events.iter().map(|e| e.time).collect(),
            NoisePaths::Idiosyncratic(ps) => ps[particle].events.iter().map(|e| e.time).collect(),
        }
    }

    /// Writes `scenario,particle,time,x..,u..` rows; needs full recording.
    pub fn write_trajectories<W: Write>(&self, out: &mut W, header: bool) -> io::Result<()> {
        let (Some(states), Some(controls)) = (&self.states, &self.controls) else {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                "cloud was simulated without full recording",
            ));
        };
        if header {
            write!(out, "scenario,particle,time")?;
            for k in 0..self.state_dim {
                write!(out, ",x{k}")?;
            }
            for k in 0..self.control_dim {
                write!(out, ",u{k}")?;
            }
            writeln!(out)?;
        }
        let (n, m) = (self.state_dim, self.control_dim);
        for i in 0..self.n_particles {
            for (node, t) in self.grid.times.iter().enumerate() {
                write!(out, "{},{},{:.16e}", self.scenario, i, t)?;
                let xs = (node * self.n_particles + i) * n;
                for v in &states[xs..xs + n] {
                    write!(out, ",{v:.16e}")?;
                }
                let us = (node * self.n_particles + i) * m;
                for v in &controls[us..us + m] {
                    write!(out, ",{v:.16e}")?;
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }
}
