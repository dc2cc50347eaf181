//! Conditional particle simulation under Poissonian common noise or
//! idiosyncratic jumps, cost estimation and the chattering construction.
//!
//! Each scenario evolves `N` particles on a jump-adapted Euler grid. The
//! conditional joint law is the empirical law of the cloud, frozen at the left
//! endpoint of every step. At an event node the jump uses the pre-jump state
//! and control; the compensator `-sum_j lambda_j gamma_j` enters the drift.

mod cloud;
mod cost;
mod path;
mod rng;
mod rule;

use rand::RngExt;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::measures::{
    AtomSet, ControlBox, ControlMeasure, EmpiricalMeasure, JointEmpiricalMeasure,
};
use crate::model::{CoefficientSet, JumpSpec, NoiseMode};

pub use cloud::{JumpRecord, NoisePaths, ParticleCloud, Recording};
pub use cost::{estimate_cost, paired_difference, scenario_costs, CostEstimate};
pub use path::{sample_poisson_path, GridEvent, JumpEvent, PoissonPath, TimeGrid};
pub use rng::{substream, Purpose};
pub use rule::{
    active_atom, chattering, slab_position, CloudStats, ControlRule, OpenLoopTable, RuleInput,
};

use path::BrownianCursor;

/// Law of the initial states.
#[derive(Clone, Debug)]
pub enum InitialLaw {
    /// Independent normal coordinates.
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
    /// I.i.d. draws from a finite measure.
    Sample(EmpiricalMeasure),
    /// Exact row-major states, one row per particle.
    Atoms(Vec<f64>),
}

/// Everything about a run except the coefficients and the control rule.
#[derive(Clone, Debug)]
pub struct SimSpec {
    pub n_particles: usize,
    pub horizon: f64,
    pub dt: f64,
    /// Resolution of the Brownian base grid; defaults to `dt`. Runs sharing
    /// it see the same Brownian paths.
    pub noise_dt: Option<f64>,
    pub mode: NoiseMode,
    pub seed: u64,
    pub recording: Recording,
    pub initial: InitialLaw,
    pub control_box: Option<ControlBox>,
}

impl SimSpec {
    fn validate(&self, state_dim: usize) -> Result<()> {
        if self.n_particles < 2 {
            return Err(Error::Config(format!(
                "need at least 2 particles, got {}",
                self.n_particles
            )));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::Config(format!(
                "horizon {} must be positive",
                self.horizon
            )));
        }
        match &self.initial {
            InitialLaw::Gaussian { mean, std } => {
                if mean.len() != state_dim || std.len() != state_dim {
                    return Err(Error::Dimension {
                        expected: state_dim,
                        got: mean.len().max(std.len()),
                    });
                }
                if std.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
                    return Err(Error::Config(
                        "initial standard deviation must be nonnegative".into(),
                    ));
                }
            }
            InitialLaw::Sample(m) => {
                if m.dim() != state_dim {
                    return Err(Error::Dimension {
                        expected: state_dim,
                        got: m.dim(),
                    });
                }
            }
            InitialLaw::Atoms(a) => {
                if a.len() != state_dim * self.n_particles {
                    return Err(Error::Dimension {
                        expected: state_dim * self.n_particles,
                        got: a.len(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn noise_step(&self) -> f64 {
        self.noise_dt.unwrap_or(self.dt)
    }
}

/// Samples the jump paths of one scenario.
pub fn sample_noise(jumps: &JumpSpec, spec: &SimSpec, scenario: u64) -> NoisePaths {
    match spec.mode {
        NoiseMode::Common => {
            let mut rng = substream(spec.seed, scenario, Purpose::CommonJumps, 0);
            NoisePaths::Common(sample_poisson_path(jumps, spec.horizon, &mut rng))
        }
        NoiseMode::Idiosyncratic => NoisePaths::Idiosyncratic(
            (0..spec.n_particles)
                .map(|i| {
                    let mut rng =
                        substream(spec.seed, scenario, Purpose::IdiosyncraticJumps, i as u64);
                    sample_poisson_path(jumps, spec.horizon, &mut rng)
                })
                .collect(),
        ),
    }
}

fn initial_states(spec: &SimSpec, scenario: u64, dim: usize) -> Vec<f64> {
    let n = spec.n_particles;
    match &spec.initial {
        InitialLaw::Atoms(a) => a.clone(),
        InitialLaw::Gaussian { mean, std } => {
            let mut out = Vec::with_capacity(n * dim);
            for i in 0..n {
                let mut rng = substream(spec.seed, scenario, Purpose::InitialState, i as u64);
                for k in 0..dim {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    out.push(mean[k] + std[k] * z);
                }
            }
            out
        }
        InitialLaw::Sample(m) => {
            let mut out = Vec::with_capacity(n * dim);
            for i in 0..n {
                let mut rng = substream(spec.seed, scenario, Purpose::InitialState, i as u64);
                let pick = active_atom(m.weights(), rng.random::<f64>());
                out.extend_from_slice(m.atom(pick));
            }
            out
        }
    }
}

/// Strict simulation; samples the scenario's jump paths from the seed.
pub fn simulate_strict<C: CoefficientSet + ?Sized>(
    coeffs: &C,
    rule: &ControlRule,
    spec: &SimSpec,
    scenario: u64,
) -> Result<ParticleCloud> {
    if rule.is_relaxed() {
        return Err(Error::Kind("simulate_strict needs a strict rule"));
    }
    let noise = sample_noise(coeffs.jumps(), spec, scenario);
    run(coeffs, rule, spec, scenario, noise)
}

/// Relaxed simulation: every coefficient is averaged over the control measure.
pub fn simulate_relaxed<C: CoefficientSet + ?Sized>(
    coeffs: &C,
    rule: &ControlRule,
    spec: &SimSpec,
    scenario: u64,
) -> Result<ParticleCloud> {
    if !rule.is_relaxed() {
        return Err(Error::Kind("simulate_relaxed needs a relaxed rule"));
    }
    let noise = sample_noise(coeffs.jumps(), spec, scenario);
    run(coeffs, rule, spec, scenario, noise)
}

/// Runs `scenarios` in parallel; output order follows the scenario index.
pub fn simulate_scenarios<C: CoefficientSet + ?Sized>(
    coeffs: &C,
    rule: &ControlRule,
    spec: &SimSpec,
    scenarios: std::ops::Range<u64>,
) -> Result<Vec<ParticleCloud>> {
    scenarios
        .into_par_iter()
        .map(|s| {
            let noise = sample_noise(coeffs.jumps(), spec, s);
            run(coeffs, rule, spec, s, noise)
        })
        .collect()
}

/// Controls of the whole cloud at one instant.
struct ControlsAt {
    /// Strict controls, or q-means for relaxed rules. `[particle][component]`.
    u: Vec<f64>,
    /// Control measures for relaxed rules.
    q: Option<Vec<ControlMeasure>>,
}

struct Engine<'a, C: ?Sized> {
    coeffs: &'a C,
    rule: &'a ControlRule,
    spec: &'a SimSpec,
    n: usize,
    m: usize,
    np: usize,
}

impl<C: CoefficientSet + ?Sized> Engine<'_, C> {
    fn controls(&self, t: f64, step: f64, states: &[f64]) -> Result<ControlsAt> {
        let stats = CloudStats::from_states(states, self.n);
        let mut u = vec![0.0; self.np * self.m];
        let q = if self.rule.is_relaxed() {
            let mut qs = Vec::with_capacity(self.np);
            for i in 0..self.np {
                let input = RuleInput {
                    t,
                    step,
                    particle: i,
                    stats: &stats,
                };
                let q = self
                    .rule
                    .eval_relaxed(&input, &states[i * self.n..(i + 1) * self.n]);
                if q.dim() != self.m {
                    return Err(Error::Dimension {
                        expected: self.m,
                        got: q.dim(),
                    });
                }
                u[i * self.m..(i + 1) * self.m].copy_from_slice(&q.mean());
                qs.push(q);
            }
            Some(qs)
        } else {
            for i in 0..self.np {
                let input = RuleInput {
                    t,
                    step,
                    particle: i,
                    stats: &stats,
                };
                self.rule.eval_strict(
                    &input,
                    &states[i * self.n..(i + 1) * self.n],
                    &mut u[i * self.m..(i + 1) * self.m],
                );
            }
            None
        };
        if let Some(bounds) = &self.spec.control_box {
            let outside = match &q {
                Some(qs) => qs
                    .iter()
                    .any(|q| (0..q.len()).any(|k| !bounds.contains(q.atom(k)))),
                None => u.chunks(self.m).any(|v| !bounds.contains(v)),
            };
            if outside {
                return Err(Error::Domain(format!("control left the box at t = {t}")));
            }
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite control at t = {t}")));
        }
        Ok(ControlsAt { u, q })
    }

    /// Statistics of the (projected) joint law.
    fn law(&self, states: &[f64], c: &ControlsAt) -> Result<Vec<f64>> {
        let w = 1.0 / self.np as f64;
        let joint = match &c.q {
            None => JointEmpiricalMeasure::strict(
                self.n,
                states.to_vec(),
                self.m,
                c.u.clone(),
                vec![w; self.np],
            )?,
            Some(qs) => {
                let mut xs = Vec::new();
                let mut us = Vec::new();
                let mut ws = Vec::new();
                for (i, q) in qs.iter().enumerate() {
                    for k in 0..q.len() {
                        xs.extend_from_slice(&states[i * self.n..(i + 1) * self.n]);
                        us.extend_from_slice(q.atom(k));
                        ws.push(w * q.weights()[k]);
                    }
                }
                JointEmpiricalMeasure::strict(self.n, xs, self.m, us, ws)?
            }
        };
        self.coeffs.law_stats(&joint)
    }

    /// `sum_k q_k phi(u_k)` written into `out`, or `phi(u)` for strict controls.
    fn averaged(
        &self,
        c: &ControlsAt,
        i: usize,
        out: &mut [f64],
        scratch: &mut [f64],
        mut phi: impl FnMut(&[f64], &mut [f64]),
    ) {
        match &c.q {
            None => phi(&c.u[i * self.m..(i + 1) * self.m], out),
            Some(qs) => {
                let q = &qs[i];
                let ws = q.weights();
                phi(q.atom(0), out);
                out.iter_mut().for_each(|v| *v *= ws[0]);
                for k in 1..q.len() {
                    phi(q.atom(k), scratch);
                    for (o, s) in out.iter_mut().zip(scratch.iter()) {
                        *o += ws[k] * s;
                    }
                }
            }
        }
    }

    fn running_cost(&self, c: &ControlsAt, i: usize, x: &[f64], law: &[f64]) -> f64 {
        let mut out = [0.0];
        let mut scratch = [0.0];
        self.averaged(c, i, &mut out, &mut scratch, |u, o| {
            o[0] = self.coeffs.running_cost(x, law, u)
        });
        out[0]
    }
}

fn check_finite(states: &[f64], step: usize, t: f64) -> Result<()> {
    if states.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence { step, t })
    }
}

/// Core loop shared by the strict and relaxed simulations.
pub fn run<C: CoefficientSet + ?Sized>(
    coeffs: &C,
    rule: &ControlRule,
    spec: &SimSpec,
    scenario: u64,
    noise: NoisePaths,
) -> Result<ParticleCloud> {
    let dims = coeffs.dims();
    spec.validate(dims.state)?;
    if noise.mode() != spec.mode {
        return Err(Error::Config(
            "noise paths do not match the simulation mode".into(),
        ));
    }
    let (n, m, d, np) = (dims.state, dims.control, dims.noise, spec.n_particles);
    if let ControlRule::OpenLoop(t) = rule {
        if t.n_particles() != np {
            return Err(Error::Dimension {
                expected: np,
                got: t.n_particles(),
            });
        }
    }
    let grid = match &noise {
        NoisePaths::Common(p) => TimeGrid::for_common(p, spec.dt, spec.noise_step())?,
        NoisePaths::Idiosyncratic(ps) => {
            if ps.len() != np {
                return Err(Error::Dimension {
                    expected: np,
                    got: ps.len(),
                });
            }
            TimeGrid::for_idiosyncratic(ps, spec.horizon, spec.dt, spec.noise_step())?
        }
    };
    let jumps = coeffs.jumps();
    let eng = Engine {
        coeffs,
        rule,
        spec,
        n,
        m,
        np,
    };

    let mut states = initial_states(spec, scenario, n);
    check_finite(&states, 0, 0.0)?;
    let initial = states.clone();
    let mut cursors: Vec<BrownianCursor> = (0..np)
        .map(|i| {
            BrownianCursor::new(
                spec.seed,
                scenario,
                i as u64,
                d,
                spec.horizon,
                grid.base_steps(),
            )
        })
        .collect();
    let mut w_prev = vec![0.0; np * d];
    let mut w_next = vec![0.0; np * d];

    let full = spec.recording == Recording::Full;
    let nodes = grid.len();
    let mut rec_states = full.then(|| Vec::with_capacity(nodes * np * n));
    let mut rec_controls = full.then(|| Vec::with_capacity(nodes * np * m));
    let mut node_mean = Vec::with_capacity(nodes * n);
    let mut node_second = Vec::with_capacity(nodes * n);
    let mut node_control_mean = Vec::with_capacity(nodes * m);
    let mut running = vec![0.0; np];
    let mut records = Vec::new();

    let mut buf = vec![0.0; n * d.max(1)];
    let mut scratch = vec![0.0; n * d.max(1)];
    let mut comp = vec![0.0; n];

    for k in 0..nodes {
        let t = grid.times[k];
        let step = if k + 1 < nodes {
            grid.times[k + 1] - t
        } else {
            0.0
        };

        // jumps at t, driven by the pre-jump state and control
        if k > 0 {
            for ev in grid.events_at(k) {
                let pre = eng.controls(t, step, &states)?;
                let law = eng.law(&states, &pre)?;
                let pre_stats = CloudStats::from_states(&states, n);
                let pre_control_mean = CloudStats::from_states(&pre.u, m).mean;
                let targets: Vec<usize> = match ev.owner {
                    None => (0..np).collect(),
                    Some(o) => vec![o],
                };
                let pre_states: Vec<f64> = targets
                    .iter()
                    .flat_map(|&i| states[i * n..(i + 1) * n].to_vec())
                    .collect();
                let pre_controls: Vec<f64> = targets
                    .iter()
                    .flat_map(|&i| pre.u[i * m..(i + 1) * m].to_vec())
                    .collect();
                for &i in &targets {
                    let x = states[i * n..(i + 1) * n].to_vec();
                    eng.averaged(&pre, i, &mut buf[..n], &mut scratch[..n], |u, o| {
                        coeffs.jump(&x, &law, u, ev.mark, o)
                    });
                    for c in 0..n {
                        states[i * n + c] += buf[c];
                    }
                }
                check_finite(&states, k, t)?;
                records.push(JumpRecord {
                    node: k,
                    time: t,
                    mark: ev.mark,
                    owner: ev.owner,
                    pre_states,
                    pre_controls,
                    pre_mean: pre_stats.mean,
                    post_mean: CloudStats::from_states(&states, n).mean,
                    pre_control_mean,
                });
            }
        }

        let ctrl = eng.controls(t, step, &states)?;
        let stats = CloudStats::from_states(&states, n);
        node_mean.extend_from_slice(&stats.mean);
        node_second.extend_from_slice(&stats.second);
        node_control_mean.extend_from_slice(&CloudStats::from_states(&ctrl.u, m).mean);
        if let Some(r) = rec_states.as_mut() {
            r.extend_from_slice(&states);
        }
        if let Some(r) = rec_controls.as_mut() {
            r.extend_from_slice(&ctrl.u);
        }
        if k + 1 == nodes {
            break;
        }

        let law = eng.law(&states, &ctrl)?;
        let t_next = grid.times[k + 1];
        let h = t_next - t;
        for i in 0..np {
            cursors[i].value(
                t_next,
                grid.base_index(k + 1),
                &mut w_next[i * d..(i + 1) * d],
            );
        }
        let mut x = vec![0.0; n];
        for i in 0..np {
            x.copy_from_slice(&states[i * n..(i + 1) * n]);
            running[i] += eng.running_cost(&ctrl, i, &x, &law) * h;

            // compensator: sum_j lambda_j gamma_j
            comp.iter_mut().for_each(|v| *v = 0.0);
            for (j, lambda) in jumps.intensities.iter().enumerate() {
                eng.averaged(&ctrl, i, &mut buf[..n], &mut scratch[..n], |u, o| {
                    coeffs.jump(&x, &law, u, j, o)
                });
                for c in 0..n {
                    comp[c] += lambda * buf[c];
                }
            }
            eng.averaged(&ctrl, i, &mut buf[..n], &mut scratch[..n], |u, o| {
                coeffs.drift(&x, &law, u, o)
            });
            for c in 0..n {
                states[i * n + c] += (buf[c] - comp[c]) * h;
            }
            eng.averaged(
                &ctrl,
                i,
                &mut buf[..n * d],
                &mut scratch[..n * d],
                |u, o| coeffs.diffusion(&x, &law, u, o),
            );
            for c in 0..n {
                let mut acc = 0.0;
                for l in 0..d {
                    acc += buf[c * d + l] * (w_next[i * d + l] - w_prev[i * d + l]);
                }
                states[i * n + c] += acc;
            }
        }
        std::mem::swap(&mut w_prev, &mut w_next);
        check_finite(&states, k + 1, t_next)?;
    }

    Ok(ParticleCloud {
        scenario,
        seed: spec.seed,
        mode: spec.mode,
        relaxed: rule.is_relaxed(),
        state_dim: n,
        control_dim: m,
        n_particles: np,
        grid,
        paths: noise,
        initial,
        terminal: states,
        running_cost: running,
        node_mean,
        node_second,
        node_control_mean,
        jumps: records,
        states: rec_states,
        controls: rec_controls,
    })
}
