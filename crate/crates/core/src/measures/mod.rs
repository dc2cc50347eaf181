//! Finite-atom measures, the Fortet–Mourier and Kantorovich–Rubinstein
//! distances, the affine projection of relaxed joints and the extension of
//! strict-joint functionals.

mod transport;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use transport::{optimal_transport, TransportPlan};

/// Largest atom count accepted by the exact transport solver.
pub const MAX_TRANSPORT_ATOMS: usize = 64;

/// Weight-sum tolerance accepted when constructing or loading a measure.
pub const LOAD_TOLERANCE: f64 = 1e-9;

fn normalize(weights: &mut [f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::InvalidMeasure("no atoms".into()));
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(Error::InvalidMeasure(format!(
            "weight {w} is not a finite nonnegative number"
        )));
    }
    let total = neumaier_sum(weights.iter().copied());
    if (total - 1.0).abs() > LOAD_TOLERANCE {
        return Err(Error::InvalidMeasure(format!(
            "weights sum to {total}, expected 1"
        )));
    }
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(())
}

/// Compensated summation.
pub(crate) fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Common read access to weighted point clouds.
pub trait AtomSet {
    fn dim(&self) -> usize;
    fn len(&self) -> usize;
    fn atom(&self, i: usize) -> &[f64];
    fn weights(&self) -> &[f64];

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Weighted atoms in R^n with weights summing to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeasureJson", into = "MeasureJson")]
pub struct EmpiricalMeasure {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MeasureJson {
    atoms: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl TryFrom<MeasureJson> for EmpiricalMeasure {
    type Error = Error;
    fn try_from(raw: MeasureJson) -> Result<Self> {
        EmpiricalMeasure::new(raw.atoms, raw.weights)
    }
}

impl From<EmpiricalMeasure> for MeasureJson {
    fn from(m: EmpiricalMeasure) -> Self {
        MeasureJson {
            atoms: (0..m.len()).map(|i| m.atom(i).to_vec()).collect(),
            weights: m.weights,
        }
    }
}

impl EmpiricalMeasure {
    pub fn new(atoms: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        let dim = atoms.first().map_or(0, Vec::len);
        if let Some(bad) = atoms.iter().find(|a| a.len() != dim) {
            return Err(Error::Dimension {
                expected: dim,
                got: bad.len(),
            });
        }
        Self::from_flat(dim, atoms.into_iter().flatten().collect(), weights)
    }

    /// Builds from row-major points.
    pub fn from_flat(dim: usize, points: Vec<f64>, mut weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidMeasure(
                "atoms must have dimension >= 1".into(),
            ));
        }
        if points.len() != dim * weights.len() {
            return Err(Error::Dimension {
                expected: dim * weights.len(),
                got: points.len(),
            });
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidMeasure("non-finite atom".into()));
        }
        normalize(&mut weights)?;
        Ok(Self {
            dim,
            points,
            weights,
        })
    }

    /// Equal weights on the given row-major points.
    pub fn uniform(dim: usize, points: Vec<f64>) -> Result<Self> {
        let n = points.len().checked_div(dim).unwrap_or(0);
        Self::from_flat(dim, points, vec![1.0 / n.max(1) as f64; n])
    }

    pub fn dirac(point: &[f64]) -> Self {
        Self {
            dim: point.len(),
            points: point.to_vec(),
            weights: vec![1.0],
        }
    }

    /// One-dimensional uniform measure, the common case for particle clouds.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::uniform(1, values.to_vec())
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Integral of a scalar function of the atom.
    pub fn integrate(&self, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.len() {
            acc += self.weights[i] * f(self.atom(i));
        }
        acc
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for i in 0..self.len() {
            for (mk, xk) in m.iter_mut().zip(self.atom(i)) {
                *mk += self.weights[i] * xk;
            }
        }
        m
    }

    /// Weighted mixture `lambda * a + (1 - lambda) * b` with atoms concatenated.
    pub fn mixture(lambda: f64, a: &Self, b: &Self) -> Result<Self> {
        if a.dim != b.dim {
            return Err(Error::Dimension {
                expected: a.dim,
                got: b.dim,
            });
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::Domain(format!(
                "mixture weight {lambda} outside [0, 1]"
            )));
        }
        let mut points = a.points.clone();
        points.extend_from_slice(&b.points);
        let weights = a
            .weights
            .iter()
            .map(|w| lambda * w)
            .chain(b.weights.iter().map(|w| (1.0 - lambda) * w))
            .collect();
        Self::from_flat(a.dim, points, weights)
    }
}

impl AtomSet for EmpiricalMeasure {
    fn dim(&self) -> usize {
        self.dim
    }
    fn len(&self) -> usize {
        self.weights.len()
    }
    fn atom(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }
    fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Compact box `U` in R^m.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ControlBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower
            .iter()
            .zip(&upper)
            .any(|(l, u)| !(l <= u) || !l.is_finite() || !u.is_finite())
        {
            return Err(Error::Domain(
                "control box bounds must be finite with lower <= upper".into(),
            ));
        }
        Ok(Self { lower, upper })
    }

    pub fn symmetric(dim: usize, radius: f64) -> Result<Self> {
        Self::new(vec![-radius; dim], vec![radius; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        u.len() == self.dim()
            && u.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (l, h))| *l <= *x && *x <= *h)
    }

    /// Tensor grid with `per_axis` points per coordinate, row-major.
    pub fn grid(&self, per_axis: usize) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(&l, &h)| {
                if per_axis <= 1 {
                    vec![0.5 * (l + h)]
                } else {
                    (0..per_axis)
                        .map(|k| l + (h - l) * k as f64 / (per_axis - 1) as f64)
                        .collect()
                }
            })
            .collect();
        let mut out = vec![Vec::new()];
        for axis in &axes {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    axis.iter().map(move |&v| {
                        let mut p = prefix.clone();
                        p.push(v);
                        p
                    })
                })
                .collect();
        }
        out
    }
}

/// A probability measure on the control space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ControlMeasure(EmpiricalMeasure);

impl ControlMeasure {
    pub fn new(support: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        EmpiricalMeasure::new(support, weights).map(Self)
    }

    /// Validates that every support point lies in `bounds`.
    pub fn in_box(support: Vec<Vec<f64>>, weights: Vec<f64>, bounds: &ControlBox) -> Result<Self> {
        let q = Self::new(support, weights)?;
        q.check_box(bounds)?;
        Ok(q)
    }

    pub fn check_box(&self, bounds: &ControlBox) -> Result<()> {
        for i in 0..self.len() {
            if !bounds.contains(self.atom(i)) {
                return Err(Error::InvalidMeasure(format!(
                    "support point {:?} outside the control box",
                    self.atom(i)
                )));
            }
        }
        Ok(())
    }

    pub fn dirac(u: &[f64]) -> Self {
        Self(EmpiricalMeasure::dirac(u))
    }

    pub fn from_measure(m: EmpiricalMeasure) -> Self {
        Self(m)
    }

    pub fn as_measure(&self) -> &EmpiricalMeasure {
        &self.0
    }

    pub fn mean(&self) -> Vec<f64> {
        self.0.mean()
    }

    pub fn is_dirac(&self) -> bool {
        self.len() == 1
    }

    pub fn mixture(lambda: f64, a: &Self, b: &Self) -> Result<Self> {
        EmpiricalMeasure::mixture(lambda, &a.0, &b.0).map(Self)
    }
}

impl AtomSet for ControlMeasure {
    fn dim(&self) -> usize {
        self.0.dim
    }
    fn len(&self) -> usize {
        self.0.len()
    }
    fn atom(&self, i: usize) -> &[f64] {
        self.0.atom(i)
    }
    fn weights(&self) -> &[f64] {
        &self.0.weights
    }
}

/// Whether a joint carries point controls or control measures.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JointKind {
    Strict,
    Relaxed,
}

#[derive(Clone, Debug, PartialEq)]
enum Controls {
    Strict { dim: usize, values: Vec<f64> },
    Relaxed(Vec<ControlMeasure>),
}

/// Weighted atoms on R^n x U (strict) or R^n x P(U) (relaxed).
#[derive(Clone, Debug, PartialEq)]
pub struct JointEmpiricalMeasure {
    state_dim: usize,
    states: Vec<f64>,
    controls: Controls,
    weights: Vec<f64>,
}

impl JointEmpiricalMeasure {
    /// Strict joint from row-major states and controls.
    pub fn strict(
        state_dim: usize,
        states: Vec<f64>,
        control_dim: usize,
        controls: Vec<f64>,
        mut weights: Vec<f64>,
    ) -> Result<Self> {
        let n = weights.len();
        if state_dim == 0 || control_dim == 0 {
            return Err(Error::InvalidMeasure(
                "state and control dimensions must be >= 1".into(),
            ));
        }
        if states.len() != n * state_dim {
            return Err(Error::Dimension {
                expected: n * state_dim,
                got: states.len(),
            });
        }
        if controls.len() != n * control_dim {
            return Err(Error::Dimension {
                expected: n * control_dim,
                got: controls.len(),
            });
        }
        if states.iter().chain(&controls).any(|v| !v.is_finite()) {
            return Err(Error::InvalidMeasure("non-finite atom".into()));
        }
        normalize(&mut weights)?;
        Ok(Self {
            state_dim,
            states,
            controls: Controls::Strict {
                dim: control_dim,
                values: controls,
            },
            weights,
        })
    }

    /// Equal-weight strict joint, one atom per particle.
    pub fn strict_uniform(
        state_dim: usize,
        states: Vec<f64>,
        control_dim: usize,
        controls: Vec<f64>,
    ) -> Result<Self> {
        let n = states.len() / state_dim.max(1);
        Self::strict(
            state_dim,
            states,
            control_dim,
            controls,
            vec![1.0 / n.max(1) as f64; n],
        )
    }

    pub fn relaxed(
        state_dim: usize,
        states: Vec<f64>,
        controls: Vec<ControlMeasure>,
        mut weights: Vec<f64>,
    ) -> Result<Self> {
        let n = weights.len();
        if state_dim == 0 {
            return Err(Error::InvalidMeasure("state dimension must be >= 1".into()));
        }
        if states.len() != n * state_dim {
            return Err(Error::Dimension {
                expected: n * state_dim,
                got: states.len(),
            });
        }
        if controls.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: controls.len(),
            });
        }
        if let Some(first) = controls.first() {
            if let Some(bad) = controls.iter().find(|q| q.dim() != first.dim()) {
                return Err(Error::Dimension {
                    expected: first.dim(),
                    got: bad.dim(),
                });
            }
        }
        if states.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidMeasure("non-finite atom".into()));
        }
        normalize(&mut weights)?;
        Ok(Self {
            state_dim,
            states,
            controls: Controls::Relaxed(controls),
            weights,
        })
    }

    pub fn kind(&self) -> JointKind {
        match self.controls {
            Controls::Strict { .. } => JointKind::Strict,
            Controls::Relaxed(_) => JointKind::Relaxed,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn control_dim(&self) -> usize {
        match &self.controls {
            Controls::Strict { dim, .. } => *dim,
            Controls::Relaxed(qs) => qs[0].dim(),
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.state_dim..(i + 1) * self.state_dim]
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    /// Control of atom `i`; `None` on a relaxed joint.
    pub fn control(&self, i: usize) -> Option<&[f64]> {
        match &self.controls {
            Controls::Strict { dim, values } => Some(&values[i * dim..(i + 1) * dim]),
            Controls::Relaxed(_) => None,
        }
    }

    /// Control measure of atom `i`; `None` on a strict joint.
    pub fn control_measure(&self, i: usize) -> Option<&ControlMeasure> {
        match &self.controls {
            Controls::Relaxed(qs) => Some(&qs[i]),
            Controls::Strict { .. } => None,
        }
    }

    /// Row-major controls of a strict joint.
    pub fn strict_controls(&self) -> Result<&[f64]> {
        match &self.controls {
            Controls::Strict { values, .. } => Ok(values),
            Controls::Relaxed(_) => Err(Error::Kind("expected a strict joint")),
        }
    }

    /// Replaces each control `u` by `delta_u`.
    pub fn dirac_lift(&self) -> Result<Self> {
        match &self.controls {
            Controls::Strict { dim, values } => Ok(Self {
                state_dim: self.state_dim,
                states: self.states.clone(),
                controls: Controls::Relaxed(
                    values.chunks(*dim).map(ControlMeasure::dirac).collect(),
                ),
                weights: self.weights.clone(),
            }),
            Controls::Relaxed(_) => Err(Error::Kind("dirac_lift needs a strict joint")),
        }
    }

    pub fn state_marginal(&self) -> EmpiricalMeasure {
        EmpiricalMeasure {
            dim: self.state_dim,
            points: self.states.clone(),
            weights: self.weights.clone(),
        }
    }

    /// `lambda * a + (1 - lambda) * b`; both must have the same kind.
    pub fn mixture(lambda: f64, a: &Self, b: &Self) -> Result<Self> {
        if a.kind() != b.kind() {
            return Err(Error::Kind("cannot mix strict and relaxed joints"));
        }
        if a.state_dim != b.state_dim {
            return Err(Error::Dimension {
                expected: a.state_dim,
                got: b.state_dim,
            });
        }
        if a.control_dim() != b.control_dim() {
            return Err(Error::Dimension {
                expected: a.control_dim(),
                got: b.control_dim(),
            });
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::Domain(format!(
                "mixture weight {lambda} outside [0, 1]"
            )));
        }
        let mut states = a.states.clone();
        states.extend_from_slice(&b.states);
        let weights: Vec<f64> = a
            .weights
            .iter()
            .map(|w| lambda * w)
            .chain(b.weights.iter().map(|w| (1.0 - lambda) * w))
            .collect();
        match (&a.controls, &b.controls) {
            (Controls::Strict { dim, values: va }, Controls::Strict { values: vb, .. }) => {
                let mut values = va.clone();
                values.extend_from_slice(vb);
                Self::strict(a.state_dim, states, *dim, values, weights)
            }
            (Controls::Relaxed(qa), Controls::Relaxed(qb)) => {
                let qs = qa.iter().chain(qb).cloned().collect();
                Self::relaxed(a.state_dim, states, qs, weights)
            }
            _ => unreachable!(),
        }
    }
}

/// `sqrt(sum w (|x|^2 + |u|^2))` of a strict joint.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize)]
pub struct SecondMoment {
    pub value: f64,
}

pub fn second_moment(rho: &JointEmpiricalMeasure) -> Result<SecondMoment> {
    let controls = rho.strict_controls()?;
    let m = rho.control_dim();
    let sum = neumaier_sum((0..rho.len()).map(|i| {
        let x2: f64 = rho.state(i).iter().map(|v| v * v).sum();
        let u2: f64 = controls[i * m..(i + 1) * m].iter().map(|v| v * v).sum();
        rho.weights[i] * (x2 + u2)
    }));
    Ok(SecondMoment {
        value: sum.max(0.0).sqrt(),
    })
}

fn check_size(n: usize, m: usize) -> Result<()> {
    let atoms = n.max(m);
    if atoms > MAX_TRANSPORT_ATOMS {
        return Err(Error::Size {
            atoms,
            limit: MAX_TRANSPORT_ATOMS,
        });
    }
    Ok(())
}

/// Fortet–Mourier distance, computed as transport with cost `min(|x - y|, 2)`.
pub fn fm_distance<A: AtomSet + ?Sized>(a: &A, b: &A) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    check_size(a.len(), b.len())?;
    let (n, m) = (a.len(), b.len());
    let mut cost = Vec::with_capacity(n * m);
    for i in 0..n {
        for j in 0..m {
            cost.push(euclid(a.atom(i), b.atom(j)).min(2.0));
        }
    }
    Ok(optimal_transport(a.weights(), b.weights(), &cost)
        .cost
        .max(0.0))
}

/// Truncated transport distance between strict joints with cost
/// `min(|x - x'| + |u - u'|, 2)`.
pub fn joint_fm_distance(a: &JointEmpiricalMeasure, b: &JointEmpiricalMeasure) -> Result<f64> {
    let ua = a.strict_controls()?;
    let ub = b.strict_controls()?;
    if a.state_dim != b.state_dim {
        return Err(Error::Dimension {
            expected: a.state_dim,
            got: b.state_dim,
        });
    }
    if a.control_dim() != b.control_dim() {
        return Err(Error::Dimension {
            expected: a.control_dim(),
            got: b.control_dim(),
        });
    }
    check_size(a.len(), b.len())?;
    let k = a.control_dim();
    let mut cost = Vec::with_capacity(a.len() * b.len());
    for i in 0..a.len() {
        for j in 0..b.len() {
            let d = euclid(a.state(i), b.state(j))
                + euclid(&ua[i * k..(i + 1) * k], &ub[j * k..(j + 1) * k]);
            cost.push(d.min(2.0));
        }
    }
    Ok(optimal_transport(&a.weights, &b.weights, &cost)
        .cost
        .max(0.0))
}

/// Kantorovich–Rubinstein distance between relaxed joints with ground cost
/// `|x - x'| + fm(q, q')`.
pub fn kr_distance(a: &JointEmpiricalMeasure, b: &JointEmpiricalMeasure) -> Result<f64> {
    let (Controls::Relaxed(qa), Controls::Relaxed(qb)) = (&a.controls, &b.controls) else {
        return Err(Error::Kind("kr_distance needs two relaxed joints"));
    };
    if a.state_dim != b.state_dim {
        return Err(Error::Dimension {
            expected: a.state_dim,
            got: b.state_dim,
        });
    }
    check_size(a.len(), b.len())?;
    let mut cost = Vec::with_capacity(a.len() * b.len());
    for i in 0..a.len() {
        for j in 0..b.len() {
            cost.push(euclid(a.state(i), b.state(j)) + fm_distance(&qa[i], &qb[j])?);
        }
    }
    Ok(optimal_transport(&a.weights, &b.weights, &cost)
        .cost
        .max(0.0))
}

/// Expands each relaxed atom `(x, q)` into strict atoms `(x, u_j)` with
/// weight `w * q_j`.
pub fn project(xi: &JointEmpiricalMeasure) -> Result<JointEmpiricalMeasure> {
    let Controls::Relaxed(qs) = &xi.controls else {
        return Err(Error::Kind("project needs a relaxed joint"));
    };
    let m = xi.control_dim();
    let mut states = Vec::new();
    let mut controls = Vec::new();
    let mut weights = Vec::new();
    for (i, q) in qs.iter().enumerate() {
        for j in 0..q.len() {
            states.extend_from_slice(xi.state(i));
            controls.extend_from_slice(q.atom(j));
            weights.push(xi.weights[i] * q.weights()[j]);
        }
    }
    JointEmpiricalMeasure::strict(xi.state_dim, states, m, controls, weights)
}

/// Evaluates a strict-joint functional on the projection of `xi`.
pub fn extend<H>(h: H, xi: &JointEmpiricalMeasure) -> Result<f64>
where
    H: FnOnce(&JointEmpiricalMeasure) -> Result<f64>,
{
    h(&project(xi)?)
}
