use rand::{Rng, RngExt};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::Serialize;

use super::rng::{substream, Purpose};
use crate::error::{Error, Result};
use crate::model::JumpSpec;

/// One atom of the Poisson random measure.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct JumpEvent {
    pub time: f64,
    pub mark: usize,
}

/// Sorted event times in `(0, T]` with their marks.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PoissonPath {
    pub horizon: f64,
    pub events: Vec<JumpEvent>,
}

impl PoissonPath {
    pub fn new(horizon: f64, events: Vec<JumpEvent>, n_marks: usize) -> Result<Self> {
        let mut prev = 0.0;
        for e in &events {
            if !(e.time > prev && e.time <= horizon) {
                return Err(Error::Domain(format!(
                    "event time {} not increasing within (0, {horizon}]",
                    e.time
                )));
            }
            if e.mark >= n_marks {
                return Err(Error::Domain(format!(
                    "mark index {} out of range for {n_marks} marks",
                    e.mark
                )));
            }
            prev = e.time;
        }
        Ok(Self { horizon, events })
    }

    pub fn empty(horizon: f64) -> Self {
        Self {
            horizon,
            events: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Exponential interarrival times with rate `lambda(Z)`, categorical marks.
pub fn sample_poisson_path<R: Rng + ?Sized>(
    jumps: &JumpSpec,
    horizon: f64,
    rng: &mut R,
) -> PoissonPath {
    let rate = jumps.total_intensity();
    let mut events = Vec::new();
    if !(rate > 0.0) {
        return PoissonPath::empty(horizon);
    }
    let exp = Exp::new(rate).expect("positive rate");
    let mut t = 0.0;
    loop {
        t += exp.sample(rng);
        if t > horizon {
            break;
        }
        let pick = rng.random::<f64>() * rate;
        let mut acc = 0.0;
        let mut mark = jumps.len() - 1;
        for (j, l) in jumps.intensities.iter().enumerate() {
            acc += l;
            if pick < acc {
                mark = j;
                break;
            }
        }
        events.push(JumpEvent { time: t, mark });
    }
    PoissonPath { horizon, events }
}

/// An event attached to a grid node; `owner` is the jumping particle in
/// idiosyncratic mode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GridEvent {
    pub time: f64,
    pub mark: usize,
    pub owner: Option<usize>,
}

/// Uniform grid refined by the event times.
#[derive(Clone, Debug, Serialize)]
pub struct TimeGrid {
    pub times: Vec<f64>,
    /// Index on the Brownian base grid for uniform nodes.
    #[serde(skip)]
    base_index: Vec<Option<usize>>,
    #[serde(skip)]
    events: Vec<Vec<GridEvent>>,
    #[serde(skip)]
    base_steps: usize,
}

fn step_count(horizon: f64, dt: f64) -> Result<usize> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::Config(format!("time step {dt} must be positive")));
    }
    Ok(((horizon / dt) - 1e-9).ceil().max(1.0) as usize)
}

/// Node times closer than this to a uniform node are merged into it.
const NODE_MERGE: f64 = 1e-12;

impl TimeGrid {
    /// `dt` must be an integer multiple of `noise_dt`, the resolution on
    /// which Brownian increments are drawn.
    pub fn jump_adapted(
        horizon: f64,
        dt: f64,
        noise_dt: f64,
        mut events: Vec<GridEvent>,
    ) -> Result<Self> {
        let m_sim = step_count(horizon, dt)?;
        let ratio = dt / noise_dt;
        let r = ratio.round();
        if !(r >= 1.0 && (ratio - r).abs() <= 1e-9 * r) {
            return Err(Error::Config(format!(
                "dt = {dt} is not an integer multiple of the noise step {noise_dt}"
            )));
        }
        let r = r as usize;
        let base_steps = m_sim * r;
        let node_time = |k: usize| {
            if k == m_sim {
                horizon
            } else {
                horizon * (k * r) as f64 / base_steps as f64
            }
        };

        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        let mut times = Vec::with_capacity(m_sim + 1 + events.len());
        let mut base_index = Vec::with_capacity(times.capacity());
        let mut node_events: Vec<Vec<GridEvent>> = Vec::with_capacity(times.capacity());
        let mut e = 0;
        for k in 0..=m_sim {
            let tk = node_time(k);
            while e < events.len() && events[e].time < tk - NODE_MERGE {
                let ev = events[e];
                if times.last() == Some(&ev.time) {
                    node_events.last_mut().expect("node").push(ev);
                } else {
                    times.push(ev.time);
                    base_index.push(None);
                    node_events.push(vec![ev]);
                }
                e += 1;
            }
            times.push(tk);
            base_index.push(Some(k * r));
            let mut here = Vec::new();
            while k > 0 && e < events.len() && events[e].time <= tk + NODE_MERGE {
                here.push(events[e]);
                e += 1;
            }
            if let Some(first) = here.first() {
                *times.last_mut().expect("node") = first.time.min(horizon);
            }
            node_events.push(here);
        }
        if e < events.len() {
            return Err(Error::Domain(format!(
                "event time {} beyond the horizon {horizon}",
                events[e].time
            )));
        }
        Ok(Self {
            times,
            base_index,
            events: node_events,
            base_steps,
        })
    }

    /// Grid for a path shared by every particle.
    pub fn for_common(path: &PoissonPath, dt: f64, noise_dt: f64) -> Result<Self> {
        let events = path
            .events
            .iter()
            .map(|e| GridEvent {
                time: e.time,
                mark: e.mark,
                owner: None,
            })
            .collect();
        Self::jump_adapted(path.horizon, dt, noise_dt, events)
    }

    /// Grid for one path per particle.
    pub fn for_idiosyncratic(
        paths: &[PoissonPath],
        horizon: f64,
        dt: f64,
        noise_dt: f64,
    ) -> Result<Self> {
        let events = paths
            .iter()
            .enumerate()
            .flat_map(|(i, p)| {
                p.events.iter().map(move |e| GridEvent {
                    time: e.time,
                    mark: e.mark,
                    owner: Some(i),
                })
            })
            .collect();
        Self::jump_adapted(horizon, dt, noise_dt, events)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("grid has nodes")
    }

    pub fn events_at(&self, node: usize) -> &[GridEvent] {
        &self.events[node]
    }

    pub fn is_event_node(&self, node: usize) -> bool {
        !self.events[node].is_empty()
    }

    pub fn max_spacing(&self) -> f64 {
        self.times
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    pub(crate) fn base_index(&self, node: usize) -> Option<usize> {
        self.base_index[node]
    }

    pub(crate) fn base_steps(&self) -> usize {
        self.base_steps
    }
}

/// Sequential sampler of one particle's Brownian path on a grid.
///
/// Values at base-grid nodes come from one normal per base cell, so grids
/// that share the base resolution see the same path. Points between base
/// nodes are filled in by Brownian bridges from a separate stream.
pub(crate) struct BrownianCursor {
    main: ChaCha8Rng,
    bridge: ChaCha8Rng,
    dim: usize,
    horizon: f64,
    steps: usize,
    cell: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    last_t: f64,
    last_w: Vec<f64>,
}

impl BrownianCursor {
    pub(crate) fn new(
        seed: u64,
        scenario: u64,
        particle: u64,
        dim: usize,
        horizon: f64,
        steps: usize,
    ) -> Self {
        let mut c = Self {
            main: substream(seed, scenario, Purpose::Brownian, particle),
            bridge: substream(seed, scenario, Purpose::BrownianBridge, particle),
            dim,
            horizon,
            steps,
            cell: 0,
            lo: vec![0.0; dim],
            hi: vec![0.0; dim],
            last_t: 0.0,
            last_w: vec![0.0; dim],
        };
        let sd = c.base_step().sqrt();
        for v in c.hi.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut c.main);
            *v = sd * z;
        }
        c
    }

    fn base_step(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    fn base_time(&self, j: usize) -> f64 {
        if j == self.steps {
            self.horizon
        } else {
            self.horizon * j as f64 / self.steps as f64
        }
    }

    fn advance(&mut self) {
        self.cell += 1;
        std::mem::swap(&mut self.lo, &mut self.hi);
        let sd = self.base_step().sqrt();
        for k in 0..self.dim {
            let z: f64 = StandardNormal.sample(&mut self.main);
            self.hi[k] = self.lo[k] + sd * z;
        }
        self.last_t = self.base_time(self.cell);
        self.last_w.copy_from_slice(&self.lo);
    }

    /// Writes `W(t)` into `out`. Queries must be nondecreasing in time.
    pub(crate) fn value(&mut self, t: f64, base: Option<usize>, out: &mut [f64]) {
        match base {
            Some(0) => out.iter_mut().for_each(|v| *v = 0.0),
            Some(j) => {
                while self.cell + 1 < j {
                    self.advance();
                }
                out.copy_from_slice(&self.hi);
            }
            None => {
                let c = ((t / self.base_step()).floor() as usize).min(self.steps - 1);
                while self.cell < c {
                    self.advance();
                }
                let (s, e) = (self.last_t, self.base_time(self.cell + 1));
                let span = e - s;
                let mean_w = (t - s) / span;
                let sd = ((t - s) * (e - t) / span).max(0.0).sqrt();
                for k in 0..self.dim {
                    let z: f64 = StandardNormal.sample(&mut self.bridge);
                    out[k] = self.last_w[k] + mean_w * (self.hi[k] - self.last_w[k]) + sd * z;
                }
                self.last_t = t;
                self.last_w.copy_from_slice(out);
            }
        }
    }
}
