//! Lifted dynamics on empirical measures: aggregated coefficients, the
//! generalized measure shift and its adjoint, the generator pieces `A0` and
//! `A1`, one weak-form Fokker-Planck step and the Ito-formula residual.

mod dictionary;
mod ito;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::measures::{
    neumaier_sum, AtomSet, ControlMeasure, EmpiricalMeasure, JointEmpiricalMeasure,
};
use crate::model::{CoefficientSet, LawStats};

pub use dictionary::{Dictionary, TestFunction};
pub use ito::{
    generator_drift, ito_residual, measure_path, ItoStep, LqValue, PathJump, PathNode,
    ValueFunction,
};

/// Transition kernel `x -> u(x)`, stored per atom of the accompanying measure.
#[derive(Clone, Debug, PartialEq)]
pub struct RelaxedKernel {
    images: Vec<ControlMeasure>,
}

impl RelaxedKernel {
    pub fn new(images: Vec<ControlMeasure>) -> Self {
        Self { images }
    }

    /// Dirac images at row-major strict controls.
    pub fn dirac(control_dim: usize, controls: &[f64]) -> Self {
        Self {
            images: controls
                .chunks_exact(control_dim)
                .map(ControlMeasure::dirac)
                .collect(),
        }
    }

    pub fn from_fn(mu: &EmpiricalMeasure, f: impl Fn(&[f64]) -> ControlMeasure) -> Self {
        Self {
            images: (0..mu.len()).map(|i| f(mu.atom(i))).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image(&self, i: usize) -> Option<&ControlMeasure> {
        self.images.get(i)
    }

    fn covers(&self, mu: &EmpiricalMeasure, control_dim: usize) -> Result<()> {
        if self.images.len() < mu.len() {
            return Err(Error::Coverage(self.images.len()));
        }
        if let Some(bad) = self.images.iter().find(|q| q.dim() != control_dim) {
            return Err(Error::Dimension {
                expected: control_dim,
                got: bad.dim(),
            });
        }
        Ok(())
    }
}

/// The joint law `mu(dx) u(x)(du)` as a strict joint on expanded atoms.
pub fn joint_law(mu: &EmpiricalMeasure, kernel: &RelaxedKernel) -> Result<JointEmpiricalMeasure> {
    let m = kernel.images.first().map_or(0, AtomSet::dim);
    kernel.covers(mu, m)?;
    let mut xs = Vec::new();
    let mut us = Vec::new();
    let mut ws = Vec::new();
    for i in 0..mu.len() {
        let q = &kernel.images[i];
        for k in 0..q.len() {
            xs.extend_from_slice(mu.atom(i));
            us.extend_from_slice(q.atom(k));
            ws.push(mu.weights()[i] * q.weights()[k]);
        }
    }
    JointEmpiricalMeasure::strict(mu.dim(), xs, m, us, ws)
}

/// Kernel-averaged coefficients at the atoms of `mu`.
#[derive(Clone, Debug, Serialize)]
pub struct Aggregated {
    pub state_dim: usize,
    pub marks: usize,
    pub law: LawStats,
    /// `[atom][component]`.
    pub drift: Vec<f64>,
    /// Averaged `sigma sigma^T`, `[atom][i][j]`.
    pub covariance: Vec<f64>,
    /// `[atom][mark][component]`.
    pub jump: Vec<f64>,
}

impl Aggregated {
    pub fn drift_at(&self, i: usize) -> &[f64] {
        &self.drift[i * self.state_dim..(i + 1) * self.state_dim]
    }

    pub fn covariance_at(&self, i: usize) -> &[f64] {
        let n2 = self.state_dim * self.state_dim;
        &self.covariance[i * n2..(i + 1) * n2]
    }

    pub fn jump_at(&self, i: usize, mark: usize) -> &[f64] {
        let base = (i * self.marks + mark) * self.state_dim;
        &self.jump[base..base + self.state_dim]
    }
}

fn check_state_dim<C: CoefficientSet + ?Sized>(mu: &EmpiricalMeasure, coeffs: &C) -> Result<()> {
    let n = coeffs.dims().state;
    if mu.dim() != n {
        return Err(Error::Dimension {
            expected: n,
            got: mu.dim(),
        });
    }
    Ok(())
}

/// Pointwise kernel averages of `b`, `sigma sigma^T` and `gamma` with the
/// measure argument set to the joint law `mu . u`.
pub fn aggregate_coeffs<C: CoefficientSet + ?Sized>(
    mu: &EmpiricalMeasure,
    kernel: &RelaxedKernel,
    coeffs: &C,
) -> Result<Aggregated> {
    check_state_dim(mu, coeffs)?;
    let dims = coeffs.dims();
    kernel.covers(mu, dims.control)?;
    let (n, d) = (dims.state, dims.noise);
    let marks = coeffs.jumps().len();
    let law = coeffs.law_stats(&joint_law(mu, kernel)?)?;

    let atoms = mu.len();
    let mut drift = vec![0.0; atoms * n];
    let mut covariance = vec![0.0; atoms * n * n];
    let mut jump = vec![0.0; atoms * marks * n];
    let mut b = vec![0.0; n];
    let mut s = vec![0.0; n * d];
    let mut g = vec![0.0; n];
    for i in 0..atoms {
        let x = mu.atom(i);
        let q = &kernel.images[i];
        for k in 0..q.len() {
            let (u, w) = (q.atom(k), q.weights()[k]);
            coeffs.drift(x, &law, u, &mut b);
            for c in 0..n {
                drift[i * n + c] += w * b[c];
            }
            coeffs.diffusion(x, &law, u, &mut s);
            for r in 0..n {
                for c in 0..n {
                    let dot: f64 = (0..d).map(|l| s[r * d + l] * s[c * d + l]).sum();
                    covariance[(i * n + r) * n + c] += w * dot;
                }
            }
            for j in 0..marks {
                coeffs.jump(x, &law, u, j, &mut g);
                for c in 0..n {
                    jump[(i * marks + j) * n + c] += w * g[c];
                }
            }
        }
    }
    Ok(Aggregated {
        state_dim: n,
        marks,
        law,
        drift,
        covariance,
        jump,
    })
}

fn check_mark<C: CoefficientSet + ?Sized>(mark: usize, coeffs: &C) -> Result<()> {
    let marks = coeffs.jumps().len();
    if mark >= marks {
        return Err(Error::Domain(format!(
            "mark index {mark} out of range for {marks} marks"
        )));
    }
    Ok(())
}

/// Post-jump atoms `x + gamma(x, mu . u, u, z)` with weights `w q(u)`.
fn shifted_atoms<C: CoefficientSet + ?Sized>(
    mu: &EmpiricalMeasure,
    kernel: &RelaxedKernel,
    mark: usize,
    coeffs: &C,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_state_dim(mu, coeffs)?;
    check_mark(mark, coeffs)?;
    kernel.covers(mu, coeffs.dims().control)?;
    let n = mu.dim();
    let law = coeffs.law_stats(&joint_law(mu, kernel)?)?;
    let mut points = Vec::new();
    let mut weights = Vec::new();
    let mut g = vec![0.0; n];
    for i in 0..mu.len() {
        let x = mu.atom(i);
        let q = &kernel.images[i];
        for k in 0..q.len() {
            coeffs.jump(x, &law, q.atom(k), mark, &mut g);
            points.extend(x.iter().zip(&g).map(|(a, b)| a + b));
            weights.push(mu.weights()[i] * q.weights()[k]);
        }
    }
    Ok((points, weights))
}

/// The adjoint shift `I*` mu: the conditional law right after a jump of mark `z`.
pub fn shift_adjoint<C: CoefficientSet + ?Sized>(
    mu: &EmpiricalMeasure,
    kernel: &RelaxedKernel,
    mark: usize,
    coeffs: &C,
) -> Result<EmpiricalMeasure> {
    let (points, weights) = shifted_atoms(mu, kernel, mark, coeffs)?;
    EmpiricalMeasure::from_flat(mu.dim(), points, weights)
}

/// `I(phi)(x) = sum_u u(x)(u) phi(x + gamma(x, mu . u, u, z))` at every atom of `mu`.
pub fn shift_operator<C: CoefficientSet + ?Sized>(
    phi: impl Fn(&[f64]) -> f64,
    mu: &EmpiricalMeasure,
    kernel: &RelaxedKernel,
    mark: usize,
    coeffs: &C,
) -> Result<Vec<f64>> {
    check_state_dim(mu, coeffs)?;
    check_mark(mark, coeffs)?;
    kernel.covers(mu, coeffs.dims().control)?;
    let n = mu.dim();
    let law = coeffs.law_stats(&joint_law(mu, kernel)?)?;
    let mut g = vec![0.0; n];
    let mut y = vec![0.0; n];
    Ok((0..mu.len())
        .map(|i| {
            let x = mu.atom(i);
            let q = &kernel.images[i];
            neumaier_sum((0..q.len()).map(|k| {
                coeffs.jump(x, &law, q.atom(k), mark, &mut g);
                for c in 0..n {
                    y[c] = x[c] + g[c];
                }
                q.weights()[k] * phi(&y)
            }))
        })
        .collect())
}

/// Finite signed measure.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SignedMeasure {
    pub dim: usize,
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl SignedMeasure {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn atom(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn total_mass(&self) -> f64 {
        neumaier_sum(self.weights.iter().copied())
    }

    pub fn pair(&self, phi: impl Fn(&[f64]) -> f64) -> f64 {
        neumaier_sum((0..self.len()).map(|i| self.weights[i] * phi(self.atom(i))))
    }

    /// Merges atoms at identical points and drops zero weights.
    pub fn compact(&self) -> Self {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            self.atom(a)
                .iter()
                .zip(self.atom(b))
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let mut points: Vec<f64> = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        for i in order {
            let p = self.atom(i);
            if !weights.is_empty() && &points[points.len() - self.dim..] == p {
                *weights.last_mut().expect("nonempty") += self.weights[i];
            } else {
                points.extend_from_slice(p);
                weights.push(self.weights[i]);
            }
        }
        let keep: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] != 0.0).collect();
        Self {
            dim: self.dim,
            points: keep
                .iter()
                .flat_map(|&i| points[i * self.dim..(i + 1) * self.dim].to_vec())
                .collect(),
            weights: keep.iter().map(|&i| weights[i]).collect(),
        }
    }
}

/// `A1 mu = I* mu - mu` as a signed measure of total mass zero.
pub fn apply_a1<C: CoefficientSet + ?Sized>(
    mu: &EmpiricalMeasure,
    kernel: &RelaxedKernel,
    mark: usize,
    coeffs: &C,
) -> Result<SignedMeasure> {
    let (mut points, mut weights) = shifted_atoms(mu, kernel, mark, coeffs)?;
    points.extend_from_slice(mu.points());
    weights.extend(mu.weights().iter().map(|w| -w));
    Ok(SignedMeasure {
        dim: mu.dim(),
        points,
        weights,
    })
}

/// `<phi, A0 mu> = int [(b^ - <gamma^, lambda>) . grad phi + tr(Sigma^ hess phi) / 2] dmu`.
pub fn pair_a0<C: CoefficientSet + ?Sized>(
    phi: &TestFunction,
    mu: &EmpiricalMeasure,
    kernel: &RelaxedKernel,
    coeffs: &C,
) -> Result<f64> {
    let agg = aggregate_coeffs(mu, kernel, coeffs)?;
    Ok(pair_a0_with(phi, mu, &agg, coeffs))
}

fn pair_a0_with<C: CoefficientSet + ?Sized>(
    phi: &TestFunction,
    mu: &EmpiricalMeasure,
    agg: &Aggregated,
    coeffs: &C,
) -> f64 {
    let n = mu.dim();
    let lambdas = &coeffs.jumps().intensities;
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n * n];
    neumaier_sum((0..mu.len()).map(|i| {
        let x = mu.atom(i);
        phi.gradient(x, &mut grad);
        phi.hessian(x, &mut hess);
        let mut acc = 0.0;
        for c in 0..n {
            let comp: f64 = lambdas
                .iter()
                .enumerate()
                .map(|(j, l)| l * agg.jump_at(i, j)[c])
                .sum();
            acc += (agg.drift_at(i)[c] - comp) * grad[c];
        }
        let cov = agg.covariance_at(i);
        acc += 0.5 * cov.iter().zip(&hess).map(|(a, b)| a * b).sum::<f64>();
        mu.weights()[i] * acc
    }))
}

/// One row of a pairing table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Pairing {
    pub phi: String,
    pub before: f64,
    pub drift: f64,
    pub jump: f64,
    pub predicted: f64,
}

/// Weak-form Fokker-Planck prediction of `<phi, mu_{t+dt}>` for every
/// dictionary entry, with the listed marks firing in `(t, t + dt]`.
pub fn fp_step<C: CoefficientSet + ?Sized>(
    mu: &EmpiricalMeasure,
    kernel: &RelaxedKernel,
    dt: f64,
    events: &[usize],
    coeffs: &C,
    dictionary: &Dictionary,
) -> Result<Vec<Pairing>> {
    let agg = aggregate_coeffs(mu, kernel, coeffs)?;
    let shifts = events
        .iter()
        .map(|&z| apply_a1(mu, kernel, z, coeffs))
        .collect::<Result<Vec<_>>>()?;
    Ok(dictionary
        .entries
        .iter()
        .map(|phi| {
            let before = mu.integrate(|x| phi.value(x));
            let drift = pair_a0_with(phi, mu, &agg, coeffs) * dt;
            let jump: f64 = shifts.iter().map(|a1| a1.pair(|x| phi.value(x))).sum();
            Pairing {
                phi: phi.id(),
                before,
                drift,
                jump,
                predicted: before + drift + jump,
            }
        })
        .collect())
}
