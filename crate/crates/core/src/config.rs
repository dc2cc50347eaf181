//! JSON experiment configuration.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{JumpSpec, LQParams, NoiseMode};
use crate::riccati::MIN_STEPS;

/// Tool version embedded in every output.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub sigma: f64,
    pub c: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkSpec {
    pub z: f64,
    pub lambda: f64,
    pub gamma: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpsSection {
    pub marks: Vec<MarkSpec>,
}

impl JumpsSection {
    pub fn to_spec(&self) -> Result<JumpSpec> {
        JumpSpec::new(
            self.marks.iter().map(|m| m.z).collect(),
            self.marks.iter().map(|m| m.lambda).collect(),
            self.marks.iter().map(|m| m.gamma).collect(),
        )
    }
}

/// Normal initial law of the state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub mean: f64,
    pub std: f64,
}

impl Default for InitialSection {
    fn default() -> Self {
        Self {
            mean: 1.0,
            std: 0.5,
        }
    }
}

fn default_riccati_steps() -> usize {
    10_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub particles: usize,
    pub scenarios: usize,
    pub dt: f64,
    /// Brownian base step; defaults to `dt`.
    #[serde(default)]
    pub noise_dt: Option<f64>,
    pub seed: u64,
    #[serde(default)]
    pub mode: NoiseMode,
    #[serde(default)]
    pub x0: InitialSection,
    #[serde(default = "default_riccati_steps")]
    pub riccati_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Terminal identity of the adjoint.
    pub terminal: f64,
    /// Interior drift identity of the adjoint equation.
    pub bsde: f64,
    /// Jump identity of the adjoint.
    pub jump: f64,
    /// Largest allowed undercut of the optimum on the control grid.
    pub smp: f64,
    /// HJB residual; `None` means `1e-6 + 10 x` the Riccati midpoint residual.
    pub hjb: Option<f64>,
    /// Width of Monte Carlo bands in standard errors.
    pub mc_sigmas: f64,
    /// Allowed relative deviation of the Fokker-Planck refinement ratio from 1/2.
    pub fp_band: f64,
    /// Required common / idiosyncratic mean-jump ratio.
    pub noise_ratio: f64,
    /// Riccati agreement of the two modes without jumps.
    pub mode_agreement: f64,
    /// Final chattering gap in paired standard errors.
    pub chattering_sigmas: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            terminal: 1e-12,
            bsde: 1e-6,
            jump: 1e-10,
            smp: 1e-8,
            hjb: None,
            mc_sigmas: 3.0,
            fp_band: 0.4,
            noise_ratio: 5.0,
            mode_agreement: 1e-10,
            chattering_sigmas: 5.0,
        }
    }
}

/// Uniform grid of candidate controls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UGrid {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Default for UGrid {
    fn default() -> Self {
        Self {
            min: -5.0,
            max: 5.0,
            points: 2001,
        }
    }
}

impl UGrid {
    pub fn values(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.points).map(|k| self.min + k as f64 * h).collect()
    }

    pub fn spacing(&self) -> f64 {
        (self.max - self.min) / (self.points - 1) as f64
    }
}

/// Deviation from the optimal feedback.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Perturbation {
    /// `alpha* + delta`.
    Offset { delta: f64 },
    /// Both gains multiplied by `factor`.
    GainScale { factor: f64 },
    /// Gains read at `min(t + shift, T)`.
    TimeShift { shift: f64 },
}

impl std::fmt::Display for Perturbation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Perturbation::Offset { delta } => write!(f, "offset({delta})"),
            Perturbation::GainScale { factor } => write!(f, "gain_scale({factor})"),
            Perturbation::TimeShift { shift } => write!(f, "time_shift({shift})"),
        }
    }
}

fn default_perturbations() -> Vec<Perturbation> {
    vec![
        Perturbation::GainScale { factor: 0.5 },
        Perturbation::GainScale { factor: 1.5 },
        Perturbation::Offset { delta: 0.5 },
        Perturbation::Offset { delta: -0.5 },
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub tolerances: Tolerances,
    pub u_grid: UGrid,
    pub perturbations: Vec<Perturbation>,
    /// `(t, particle)` points sampled by the SMP check.
    pub smp_samples: usize,
    /// Random `(t, mu)` pairs for the HJB check.
    pub hjb_samples: usize,
    pub hjb_max_atoms: usize,
    /// Scenarios for the BSDE check.
    pub bsde_paths: usize,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            tolerances: Tolerances::default(),
            u_grid: UGrid::default(),
            perturbations: default_perturbations(),
            smp_samples: 200,
            hjb_samples: 100,
            hjb_max_atoms: 16,
            bsde_paths: 10,
        }
    }
}

/// Two-atom relaxed rule `w(x) delta_low + (1 - w(x)) delta_high` with
/// `w(x) = 1 / (1 + exp(slope (x - center)))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChatteringSection {
    pub slabs: Vec<usize>,
    pub low: f64,
    pub high: f64,
    pub slope: f64,
    pub center: f64,
    /// Step used for the chattering runs; defaults to the simulation step.
    pub dt: Option<f64>,
}

impl Default for ChatteringSection {
    fn default() -> Self {
        Self {
            slabs: vec![2, 4, 8, 16, 32],
            low: -1.0,
            high: 1.0,
            slope: 2.0,
            center: 1.0,
            dt: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Directory for files whose path is not given on the command line.
    pub dir: String,
    /// Dump per-particle trajectories from `simulate`.
    pub trajectories: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: ".".into(),
            trajectories: false,
        }
    }
}

/// Complete experiment description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    #[serde(default)]
    pub jumps: JumpsSection,
    pub sim: SimSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub chattering: ChatteringSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {v}")))
    }
}

impl ExperimentConfig {
    /// Parses and validates; parse errors carry line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.lq_params()?.validate()?;
        let s = &self.sim;
        if s.particles < 2 {
            return Err(Error::Config(format!(
                "sim.particles must be at least 2, got {}",
                s.particles
            )));
        }
        if s.scenarios == 0 {
            return Err(Error::Config("sim.scenarios must be at least 1".into()));
        }
        positive("sim.dt", s.dt)?;
        if let Some(h) = s.noise_dt {
            positive("sim.noise_dt", h)?;
        }
        if !(s.x0.std.is_finite() && s.x0.std >= 0.0 && s.x0.mean.is_finite()) {
            return Err(Error::Config(
                "sim.x0 must have a finite mean and nonnegative std".into(),
            ));
        }
        if s.riccati_steps < MIN_STEPS {
            return Err(Error::Config(format!(
                "sim.riccati_steps must be at least {MIN_STEPS}"
            )));
        }
        let t = &self.verify.tolerances;
        for (name, v) in [
            ("terminal", t.terminal),
            ("bsde", t.bsde),
            ("jump", t.jump),
            ("smp", t.smp),
            ("mc_sigmas", t.mc_sigmas),
            ("fp_band", t.fp_band),
            ("noise_ratio", t.noise_ratio),
            ("mode_agreement", t.mode_agreement),
            ("chattering_sigmas", t.chattering_sigmas),
        ] {
            positive(&format!("verify.tolerances.{name}"), v)?;
        }
        if let Some(h) = t.hjb {
            positive("verify.tolerances.hjb", h)?;
        }
        let g = &self.verify.u_grid;
        if g.points < 3 || !(g.min < g.max) || !g.min.is_finite() || !g.max.is_finite() {
            return Err(Error::Config(
                "verify.u_grid needs min < max and at least 3 points".into(),
            ));
        }
        if self.verify.hjb_max_atoms == 0 {
            return Err(Error::Config(
                "verify.hjb_max_atoms must be at least 1".into(),
            ));
        }
        let c = &self.chattering;
        if c.slabs.is_empty() || c.slabs.contains(&0) {
            return Err(Error::Config(
                "chattering.slabs must be a nonempty list of positive counts".into(),
            ));
        }
        if let Some(dt) = c.dt {
            positive("chattering.dt", dt)?;
        }
        Ok(())
    }

    pub fn lq_params(&self) -> Result<LQParams> {
        let m = &self.model;
        Ok(LQParams {
            b1: m.b1,
            b2: m.b2,
            b3: m.b3,
            sigma: m.sigma,
            c: m.c,
            horizon: m.horizon,
            jumps: self.jumps.to_spec()?,
        })
    }

    /// Hex SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Seed, config hash and tool version attached to every report.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
    pub version: String,
}

impl Provenance {
    pub fn of(cfg: &ExperimentConfig) -> Self {
        Self {
            seed: cfg.sim.seed,
            config_hash: cfg.hash(),
            version: VERSION.to_string(),
        }
    }
}
