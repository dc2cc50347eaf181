use std::sync::Arc;

use crate::error::{Error, Result};
use crate::measures::{AtomSet, ControlMeasure};

/// Frozen cloud statistics handed to control rules.
#[derive(Clone, Debug, Default)]
pub struct CloudStats {
    /// Per-component mean of the states.
    pub mean: Vec<f64>,
    /// Per-component mean of the squared states.
    pub second: Vec<f64>,
    pub n_particles: usize,
}

impl CloudStats {
    pub fn from_states(states: &[f64], dim: usize) -> Self {
        let n = states.len() / dim;
        let mut mean = vec![0.0; dim];
        let mut second = vec![0.0; dim];
        for x in states.chunks_exact(dim) {
            for k in 0..dim {
                mean[k] += x[k];
                second[k] += x[k] * x[k];
            }
        }
        let inv = 1.0 / n as f64;
        mean.iter_mut()
            .chain(second.iter_mut())
            .for_each(|v| *v *= inv);
        Self {
            mean,
            second,
            n_particles: n,
        }
    }
}

/// Arguments of a control rule besides the particle state.
#[derive(Clone, Copy, Debug)]
pub struct RuleInput<'a> {
    pub t: f64,
    /// Length of the step the control is held for; 0 at the horizon.
    pub step: f64,
    pub particle: usize,
    pub stats: &'a CloudStats,
}

pub type FeedbackFn = dyn Fn(&RuleInput<'_>, &[f64], &mut [f64]) + Send + Sync;
pub type RelaxedFn = dyn Fn(&RuleInput<'_>, &[f64]) -> ControlMeasure + Send + Sync;

/// Per-particle controls held constant on time slots `[starts[s], starts[s+1])`.
#[derive(Clone, Debug)]
pub struct OpenLoopTable {
    starts: Vec<f64>,
    n_particles: usize,
    control_dim: usize,
    /// `[slot][particle][component]`.
    values: Vec<f64>,
}

impl OpenLoopTable {
    pub fn new(
        starts: Vec<f64>,
        n_particles: usize,
        control_dim: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        if starts.is_empty() || starts.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config(
                "open-loop slot starts must be nonempty and increasing".into(),
            ));
        }
        let expected = starts.len() * n_particles * control_dim;
        if values.len() != expected {
            return Err(Error::Dimension {
                expected,
                got: values.len(),
            });
        }
        Ok(Self {
            starts,
            n_particles,
            control_dim,
            values,
        })
    }

    /// The same control for every particle at every time.
    pub fn constant(n_particles: usize, u: &[f64]) -> Self {
        let values = (0..n_particles).flat_map(|_| u.iter().copied()).collect();
        Self {
            starts: vec![0.0],
            n_particles,
            control_dim: u.len(),
            values,
        }
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    pub fn lookup(&self, t: f64, particle: usize) -> &[f64] {
        let slot = self.starts.partition_point(|s| *s <= t).saturating_sub(1);
        let base = (slot * self.n_particles + particle) * self.control_dim;
        &self.values[base..base + self.control_dim]
    }
}

/// How controls are chosen along a simulation.
#[derive(Clone)]
pub enum ControlRule {
    OpenLoop(Arc<OpenLoopTable>),
    Feedback(Arc<FeedbackFn>),
    Relaxed(Arc<RelaxedFn>),
}

impl std::fmt::Debug for ControlRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ControlRule::OpenLoop(t) => f.debug_tuple("OpenLoop").field(&t.starts.len()).finish(),
            ControlRule::Feedback(_) => f.write_str("Feedback(..)"),
            ControlRule::Relaxed(_) => f.write_str("Relaxed(..)"),
        }
    }
}

impl ControlRule {
    pub fn feedback<F>(f: F) -> Self
    where
        F: Fn(&RuleInput<'_>, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        ControlRule::Feedback(Arc::new(f))
    }

    pub fn relaxed<F>(f: F) -> Self
    where
        F: Fn(&RuleInput<'_>, &[f64]) -> ControlMeasure + Send + Sync + 'static,
    {
        ControlRule::Relaxed(Arc::new(f))
    }

    pub fn constant(u: Vec<f64>) -> Self {
        Self::feedback(move |_, _, out| out.copy_from_slice(&u))
    }

    pub fn is_relaxed(&self) -> bool {
        matches!(self, ControlRule::Relaxed(_))
    }

    /// Dirac-valued relaxed version of a strict rule.
    pub fn lift_to_relaxed(&self, control_dim: usize) -> Result<Self> {
        match self {
            ControlRule::Relaxed(_) => Err(Error::Kind("rule is already relaxed")),
            strict => {
                let strict = strict.clone();
                Ok(Self::relaxed(move |input, x| {
                    let mut u = vec![0.0; control_dim];
                    strict.eval_strict(input, x, &mut u);
                    ControlMeasure::dirac(&u)
                }))
            }
        }
    }

    /// Evaluates a strict rule. Panics on a relaxed rule.
    pub(crate) fn eval_strict(&self, input: &RuleInput<'_>, x: &[f64], out: &mut [f64]) {
        match self {
            ControlRule::OpenLoop(table) => {
                out.copy_from_slice(table.lookup(input.t, input.particle))
            }
            ControlRule::Feedback(f) => f(input, x, out),
            ControlRule::Relaxed(_) => unreachable!("relaxed rule evaluated as strict"),
        }
    }

    pub(crate) fn eval_relaxed(&self, input: &RuleInput<'_>, x: &[f64]) -> ControlMeasure {
        match self {
            ControlRule::Relaxed(f) => f(input, x),
            _ => unreachable!("strict rule evaluated as relaxed"),
        }
    }
}

/// Tolerance used to place slab boundaries.
const SLAB_EPS: f64 = 1e-9;

/// Position of `t` inside its slab, as `(slab index, fraction in [0, 1))`.
pub fn slab_position(t: f64, n_slabs: usize, horizon: f64) -> (usize, f64) {
    let s = t * n_slabs as f64 / horizon;
    let slab = ((s + SLAB_EPS).floor() as usize).min(n_slabs.saturating_sub(1));
    (slab, (s - slab as f64).clamp(0.0, 1.0))
}

/// Index of the atom active at `frac` when a slab is split into consecutive
/// pieces with lengths proportional to `weights`.
pub fn active_atom(weights: &[f64], frac: f64) -> usize {
    let mut acc = 0.0;
    for (k, w) in weights.iter().enumerate() {
        acc += w;
        if frac < acc - SLAB_EPS {
            return k;
        }
    }
    weights.len() - 1
}

/// Strict rule that cycles through the atoms of the relaxed rule, spending a
/// fraction `q_k` of each of the `n_slabs` slabs of `[0, T]` at atom `k`.
/// Each slab visits the atoms forward over its first half and backward over
/// its second half, so the state offset within a slab averages out. A step is
/// assigned to the atom active at its midpoint.
pub fn chattering(q_rule: &ControlRule, n_slabs: usize, horizon: f64) -> Result<ControlRule> {
    let ControlRule::Relaxed(q) = q_rule else {
        return Err(Error::Kind("chattering needs a relaxed rule"));
    };
    if n_slabs == 0 {
        return Err(Error::Config("chattering needs at least one slab".into()));
    }
    if !(horizon > 0.0) {
        return Err(Error::Config("chattering horizon must be positive".into()));
    }
    let q = Arc::clone(q);
    Ok(ControlRule::feedback(move |input, x, out| {
        let measure = q(input, x);
        let total: f64 = measure.weights().iter().sum();
        debug_assert!((total - 1.0).abs() < 1e-9, "control measure not normalized");
        let (_, frac) = slab_position(input.t + 0.5 * input.step, n_slabs, horizon);
        let folded = if frac < 0.5 {
            2.0 * frac
        } else {
            2.0 * (1.0 - frac)
        };
        out.copy_from_slice(measure.atom(active_atom(measure.weights(), folded)));
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(t: f64, stats: &CloudStats) -> RuleInput<'_> {
        RuleInput {
            t,
            step: 0.0,
            particle: 0,
            stats,
        }
    }

    #[test]
    fn open_loop_lookup() {
        let table = OpenLoopTable::new(vec![0.0, 0.5], 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(table.lookup(0.2, 1), &[2.0]);
        assert_eq!(table.lookup(0.5, 0), &[3.0]);
        assert_eq!(table.lookup(0.9, 1), &[4.0]);
    }

    #[test]
    fn chattering_dirac_is_constant() {
        let q = ControlRule::relaxed(|_, _| ControlMeasure::dirac(&[0.7]));
        let stats = CloudStats::default();
        for n in [1, 3, 8] {
            let rule = chattering(&q, n, 1.0).unwrap();
            for k in 0..50 {
                let mut u = [0.0];
                rule.eval_strict(&input(k as f64 / 50.0, &stats), &[0.0], &mut u);
                assert_eq!(u[0], 0.7);
            }
        }
    }

    #[test]
    fn chattering_splits_slabs() {
        let q = ControlRule::relaxed(|_, _| {
            ControlMeasure::new(vec![vec![-1.0], vec![1.0]], vec![0.5, 0.5]).unwrap()
        });
        let rule = chattering(&q, 4, 1.0).unwrap();
        let stats = CloudStats::default();
        let m = 64;
        let mut time_at_a = [0usize; 4];
        for k in 0..m {
            let t = k as f64 / m as f64;
            let mut u = [0.0];
            let step = RuleInput {
                step: 1.0 / m as f64,
                ..input(t, &stats)
            };
            rule.eval_strict(&step, &[0.0], &mut u);
            let slab = k / 16;
            let outer = (k % 16) < 4 || (k % 16) >= 12;
            assert_eq!(u[0], if outer { -1.0 } else { 1.0 }, "t = {t}");
            if u[0] == -1.0 {
                time_at_a[slab] += 1;
            }
        }
        assert_eq!(time_at_a, [8; 4]);
    }

    #[test]
    fn cloud_stats() {
        let s = CloudStats::from_states(&[1.0, 2.0, 3.0, 6.0], 2);
        assert_eq!(s.mean, vec![2.0, 4.0]);
        assert_eq!(s.second, vec![5.0, 20.0]);
    }
}
