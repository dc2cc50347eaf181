use serde::{Deserialize, Serialize};

use super::{CoefficientSet, Dims};
use crate::error::{Error, Result};
use crate::measures::{project, AtomSet, ControlMeasure, JointEmpiricalMeasure, JointKind};

/// Adjoint values `(p, P, K)` at one point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdjointTriplet {
    pub p: Vec<f64>,
    /// Row-major `state x noise`.
    pub p_sigma: Vec<f64>,
    /// One vector per mark.
    pub k: Vec<Vec<f64>>,
}

impl AdjointTriplet {
    pub fn zeros(dims: Dims, marks: usize) -> Self {
        Self {
            p: vec![0.0; dims.state],
            p_sigma: vec![0.0; dims.state * dims.noise],
            k: vec![vec![0.0; dims.state]; marks],
        }
    }

    /// Scalar convenience constructor for one-dimensional models.
    pub fn scalar(p: f64, p_sigma: f64, k: Vec<f64>) -> Self {
        Self {
            p: vec![p],
            p_sigma: vec![p_sigma],
            k: k.into_iter().map(|v| vec![v]).collect(),
        }
    }

    fn check(&self, dims: Dims, marks: usize) -> Result<()> {
        if self.p.len() != dims.state {
            return Err(Error::Dimension {
                expected: dims.state,
                got: self.p.len(),
            });
        }
        if self.p_sigma.len() != dims.state * dims.noise {
            return Err(Error::Dimension {
                expected: dims.state * dims.noise,
                got: self.p_sigma.len(),
            });
        }
        if self.k.len() != marks {
            return Err(Error::Dimension {
                expected: marks,
                got: self.k.len(),
            });
        }
        if let Some(bad) = self.k.iter().find(|k| k.len() != dims.state) {
            return Err(Error::Dimension {
                expected: dims.state,
                got: bad.len(),
            });
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `H = b.p + tr(sigma P^T) + f + sum_j lambda_j gamma(z_j).K(z_j)` with the
/// law entering through precomputed statistics.
pub fn hamiltonian_with_stats<C: CoefficientSet + ?Sized>(
    coeffs: &C,
    x: &[f64],
    u: &[f64],
    law: &[f64],
    adj: &AdjointTriplet,
) -> Result<f64> {
    let dims = coeffs.dims();
    let jumps = coeffs.jumps();
    adj.check(dims, jumps.len())?;
    let mut buf = vec![0.0; dims.state * dims.noise.max(1)];

    coeffs.drift(x, law, u, &mut buf[..dims.state]);
    let mut h = dot(&buf[..dims.state], &adj.p);
    coeffs.diffusion(x, law, u, &mut buf[..dims.state * dims.noise]);
    h += dot(&buf[..dims.state * dims.noise], &adj.p_sigma);
    h += coeffs.running_cost(x, law, u);
    for (j, lambda) in jumps.intensities.iter().enumerate() {
        coeffs.jump(x, law, u, j, &mut buf[..dims.state]);
        h += lambda * dot(&buf[..dims.state], &adj.k[j]);
    }
    Ok(h)
}

/// Linear derivative of `H(x, u, ., adj)` at `(x', u')`.
pub fn delta_hamiltonian_with_stats<C: CoefficientSet + ?Sized>(
    coeffs: &C,
    x: &[f64],
    u: &[f64],
    law: &[f64],
    xp: &[f64],
    up: &[f64],
    adj: &AdjointTriplet,
) -> Result<f64> {
    let dims = coeffs.dims();
    let jumps = coeffs.jumps();
    adj.check(dims, jumps.len())?;
    let mut buf = vec![0.0; dims.state * dims.noise.max(1)];

    coeffs.drift_delta(x, law, u, xp, up, &mut buf[..dims.state])?;
    let mut h = dot(&buf[..dims.state], &adj.p);
    coeffs.diffusion_delta(x, law, u, xp, up, &mut buf[..dims.state * dims.noise])?;
    h += dot(&buf[..dims.state * dims.noise], &adj.p_sigma);
    h += coeffs.running_cost_delta(x, law, u, xp, up)?;
    for (j, lambda) in jumps.intensities.iter().enumerate() {
        coeffs.jump_delta(x, law, u, j, xp, up, &mut buf[..dims.state])?;
        h += lambda * dot(&buf[..dims.state], &adj.k[j]);
    }
    Ok(h)
}

fn strict_stats<C: CoefficientSet + ?Sized>(
    coeffs: &C,
    rho: &JointEmpiricalMeasure,
) -> Result<Vec<f64>> {
    if rho.kind() != JointKind::Strict {
        return Err(Error::Kind("expected a strict joint law"));
    }
    coeffs.law_stats(rho)
}

/// Strict Hamiltonian `H(x, u, rho, p, P, K)`.
pub fn hamiltonian_strict<C: CoefficientSet + ?Sized>(
    x: &[f64],
    u: &[f64],
    rho: &JointEmpiricalMeasure,
    adj: &AdjointTriplet,
    coeffs: &C,
) -> Result<f64> {
    hamiltonian_with_stats(coeffs, x, u, &strict_stats(coeffs, rho)?, adj)
}

/// Strict delta-Hamiltonian `delta H(x, u, rho, x', u', p, P, K)`.
pub fn delta_hamiltonian_strict<C: CoefficientSet + ?Sized>(
    x: &[f64],
    u: &[f64],
    rho: &JointEmpiricalMeasure,
    xp: &[f64],
    up: &[f64],
    adj: &AdjointTriplet,
    coeffs: &C,
) -> Result<f64> {
    delta_hamiltonian_with_stats(coeffs, x, u, &strict_stats(coeffs, rho)?, xp, up, adj)
}

fn relaxed_stats<C: CoefficientSet + ?Sized>(
    coeffs: &C,
    xi: &JointEmpiricalMeasure,
) -> Result<Vec<f64>> {
    if xi.kind() != JointKind::Relaxed {
        return Err(Error::Kind("expected a relaxed joint law"));
    }
    coeffs.law_stats(&project(xi)?)
}

/// Relaxed Hamiltonian: the `q`-average of the strict one at `rho = project(xi)`.
pub fn hamiltonian_relaxed<C: CoefficientSet + ?Sized>(
    x: &[f64],
    q: &ControlMeasure,
    xi: &JointEmpiricalMeasure,
    adj: &AdjointTriplet,
    coeffs: &C,
) -> Result<f64> {
    let law = relaxed_stats(coeffs, xi)?;
    let mut acc = 0.0;
    for (k, w) in q.weights().iter().enumerate() {
        acc += w * hamiltonian_with_stats(coeffs, x, q.atom(k), &law, adj)?;
    }
    Ok(acc)
}

/// Relaxed delta-Hamiltonian: double average of the strict kernel over `q`
/// and `q'`.
pub fn delta_hamiltonian_relaxed<C: CoefficientSet + ?Sized>(
    x: &[f64],
    q: &ControlMeasure,
    xi: &JointEmpiricalMeasure,
    xp: &[f64],
    qp: &ControlMeasure,
    adj: &AdjointTriplet,
    coeffs: &C,
) -> Result<f64> {
    let law = relaxed_stats(coeffs, xi)?;
    let mut acc = 0.0;
    for (k, w) in q.weights().iter().enumerate() {
        for (l, wp) in qp.weights().iter().enumerate() {
            acc += w
                * wp
                * delta_hamiltonian_with_stats(coeffs, x, q.atom(k), &law, xp, qp.atom(l), adj)?;
        }
    }
    Ok(acc)
}

/// `d_x H`, the adjoint driver contribution of the particle itself.
pub fn hamiltonian_dx<C: CoefficientSet + ?Sized>(
    x: &[f64],
    u: &[f64],
    law: &[f64],
    adj: &AdjointTriplet,
    coeffs: &C,
) -> Result<Vec<f64>> {
    let dims = coeffs.dims();
    let jumps = coeffs.jumps();
    adj.check(dims, jumps.len())?;
    let n = dims.state;
    let mut out = vec![0.0; n];
    let mut jac = vec![0.0; n * n];
    coeffs.drift_dx(x, law, u, &mut jac)?;
    // jac[i * n + k] = d b_i / d x_k
    for k in 0..n {
        out[k] += (0..n).map(|i| jac[i * n + k] * adj.p[i]).sum::<f64>();
    }
    let mut sdx = vec![0.0; n * n * dims.noise];
    coeffs.diffusion_dx(x, law, u, &mut sdx)?;
    for k in 0..n {
        out[k] += dot(
            &sdx[k * n * dims.noise..(k + 1) * n * dims.noise],
            &adj.p_sigma,
        );
    }
    let mut fdx = vec![0.0; n];
    coeffs.running_cost_dx(x, law, u, &mut fdx)?;
    for k in 0..n {
        out[k] += fdx[k];
    }
    for (j, lambda) in jumps.intensities.iter().enumerate() {
        coeffs.jump_dx(x, law, u, j, &mut jac)?;
        for k in 0..n {
            out[k] += lambda * (0..n).map(|i| jac[i * n + k] * adj.k[j][i]).sum::<f64>();
        }
    }
    Ok(out)
}

/// `d_{x'} delta H(x, u, rho, x', u', adj)`: with the roles of the particle and
/// its copy swapped, this is the mean-field contribution to the adjoint driver.
#[allow(clippy::too_many_arguments)]
pub fn delta_hamiltonian_dxp<C: CoefficientSet + ?Sized>(
    x: &[f64],
    u: &[f64],
    law: &[f64],
    xp: &[f64],
    up: &[f64],
    adj: &AdjointTriplet,
    coeffs: &C,
) -> Result<Vec<f64>> {
    let dims = coeffs.dims();
    let jumps = coeffs.jumps();
    adj.check(dims, jumps.len())?;
    let n = dims.state;
    let mut out = vec![0.0; n];
    let mut jac = vec![0.0; n * n];
    coeffs.drift_delta_dxp(x, law, u, xp, up, &mut jac)?;
    for k in 0..n {
        out[k] += (0..n).map(|i| jac[i * n + k] * adj.p[i]).sum::<f64>();
    }
    let mut sdx = vec![0.0; n * n * dims.noise];
    coeffs.diffusion_delta_dxp(x, law, u, xp, up, &mut sdx)?;
    for k in 0..n {
        out[k] += dot(
            &sdx[k * n * dims.noise..(k + 1) * n * dims.noise],
            &adj.p_sigma,
        );
    }
    let mut fdx = vec![0.0; n];
    coeffs.running_cost_delta_dxp(x, law, u, xp, up, &mut fdx)?;
    for k in 0..n {
        out[k] += fdx[k];
    }
    for (j, lambda) in jumps.intensities.iter().enumerate() {
        coeffs.jump_delta_dxp(x, law, u, j, xp, up, &mut jac)?;
        for k in 0..n {
            out[k] += lambda * (0..n).map(|i| jac[i * n + k] * adj.k[j][i]).sum::<f64>();
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{JumpSpec, LQParams, LqModel};

    fn lq(b1: f64, b2: f64, b3: f64, jumps: JumpSpec) -> LqModel {
        LqModel::new(LQParams {
            b1,
            b2,
            b3,
            sigma: 0.0,
            c: 1.0,
            horizon: 1.0,
            jumps,
        })
        .unwrap()
    }

    fn centered() -> JointEmpiricalMeasure {
        JointEmpiricalMeasure::strict_uniform(1, vec![-1.0, 1.0], 1, vec![-2.0, 2.0]).unwrap()
    }

    #[test]
    fn strict_hamiltonian_examples() {
        let m = lq(0.0, 0.0, 1.0, JumpSpec::none());
        let adj = AdjointTriplet::scalar(1.0, 0.0, vec![]);
        assert_eq!(
            hamiltonian_strict(&[1.0], &[2.0], &centered(), &adj, &m).unwrap(),
            4.0
        );

        let zero = AdjointTriplet::scalar(0.0, 0.0, vec![]);
        assert_eq!(
            hamiltonian_strict(&[0.0], &[0.0], &centered(), &zero, &m).unwrap(),
            0.0
        );

        let mj = lq(0.0, 0.0, 0.0, JumpSpec::single(2.0, 1.0).unwrap());
        let adj = AdjointTriplet::scalar(0.0, 0.0, vec![1.0]);
        assert_eq!(
            hamiltonian_strict(&[0.0], &[1.0], &centered(), &adj, &mj).unwrap(),
            2.5
        );
    }

    #[test]
    fn delta_hamiltonian_examples() {
        let rho = centered();
        let adj = AdjointTriplet::scalar(1.0, 0.0, vec![]);
        let m = lq(2.0, 0.0, 1.0, JumpSpec::none());
        assert_eq!(
            delta_hamiltonian_strict(&[0.3], &[0.1], &rho, &[3.0], &[5.0], &adj, &m).unwrap(),
            6.0
        );
        let adj0 = AdjointTriplet::scalar(0.0, 0.0, vec![]);
        assert_eq!(
            delta_hamiltonian_strict(&[0.3], &[0.1], &rho, &[3.0], &[5.0], &adj0, &m).unwrap(),
            0.0
        );
        let m = lq(1.0, 1.0, 1.0, JumpSpec::none());
        let adj2 = AdjointTriplet::scalar(2.0, 0.0, vec![]);
        assert_eq!(
            delta_hamiltonian_strict(&[0.3], &[0.1], &rho, &[1.0], &[1.0], &adj2, &m).unwrap(),
            4.0
        );
    }

    #[test]
    fn relaxed_examples() {
        let m = lq(0.2, 0.3, 1.0, JumpSpec::single(1.5, 0.4).unwrap());
        let rho = centered();
        let xi = rho.dirac_lift().unwrap();
        let adj = AdjointTriplet::scalar(0.7, 0.0, vec![-0.3]);
        let strict = hamiltonian_strict(&[0.5], &[1.2], &rho, &adj, &m).unwrap();
        let relaxed =
            hamiltonian_relaxed(&[0.5], &ControlMeasure::dirac(&[1.2]), &xi, &adj, &m).unwrap();
        assert!((strict - relaxed).abs() < 1e-15);

        let q = ControlMeasure::new(vec![vec![-1.0], vec![2.0]], vec![0.5, 0.5]).unwrap();
        let h1 = hamiltonian_strict(&[0.5], &[-1.0], &rho, &adj, &m).unwrap();
        let h2 = hamiltonian_strict(&[0.5], &[2.0], &rho, &adj, &m).unwrap();
        let hq = hamiltonian_relaxed(&[0.5], &q, &xi, &adj, &m).unwrap();
        assert!((hq - 0.5 * (h1 + h2)).abs() < 1e-15);

        let zero = AdjointTriplet::scalar(0.0, 0.0, vec![0.0]);
        let q0 = ControlMeasure::dirac(&[0.0]);
        assert_eq!(
            hamiltonian_relaxed(&[0.5], &q0, &xi, &zero, &m).unwrap(),
            0.0
        );

        let d_strict =
            delta_hamiltonian_strict(&[0.5], &[1.2], &rho, &[0.4], &[-0.6], &adj, &m).unwrap();
        let d_relaxed = delta_hamiltonian_relaxed(
            &[0.5],
            &ControlMeasure::dirac(&[1.2]),
            &xi,
            &[0.4],
            &ControlMeasure::dirac(&[-0.6]),
            &adj,
            &m,
        )
        .unwrap();
        assert!((d_strict - d_relaxed).abs() < 1e-15);
        let d_mix = delta_hamiltonian_relaxed(&[0.5], &q, &xi, &[0.4], &q, &adj, &m).unwrap();
        // kernel (b1 x' + b2 u') p averaged over u' in q
        assert!((d_mix - (0.2 * 0.4 + 0.3 * 0.5) * 0.7).abs() < 1e-15);
    }

    #[test]
    fn kind_is_enforced() {
        let m = lq(0.0, 0.0, 1.0, JumpSpec::none());
        let adj = AdjointTriplet::scalar(1.0, 0.0, vec![]);
        let xi = centered().dirac_lift().unwrap();
        assert!(matches!(
            hamiltonian_strict(&[0.0], &[0.0], &xi, &adj, &m),
            Err(Error::Kind(_))
        ));
        let q = ControlMeasure::dirac(&[0.0]);
        assert!(matches!(
            hamiltonian_relaxed(&[0.0], &q, &centered(), &adj, &m),
            Err(Error::Kind(_))
        ));
    }

    #[test]
    fn adjoint_mark_count_checked() {
        let m = lq(0.0, 0.0, 1.0, JumpSpec::single(1.0, 1.0).unwrap());
        let adj = AdjointTriplet::scalar(1.0, 0.0, vec![]);
        assert!(matches!(
            hamiltonian_strict(&[0.0], &[0.0], &centered(), &adj, &m),
            Err(Error::Dimension { .. })
        ));
    }

    struct Bare;
    impl CoefficientSet for Bare {
        fn dims(&self) -> Dims {
            Dims {
                state: 1,
                control: 1,
                noise: 1,
            }
        }
        fn jumps(&self) -> &JumpSpec {
            static NONE: JumpSpec = JumpSpec {
                marks: Vec::new(),
                intensities: Vec::new(),
                gamma_values: Vec::new(),
            };
            &NONE
        }
        fn law_stats(&self, _rho: &JointEmpiricalMeasure) -> Result<Vec<f64>> {
            Ok(vec![])
        }
        fn state_law_stats(&self, _mu: &crate::measures::EmpiricalMeasure) -> Vec<f64> {
            vec![]
        }
        fn drift(&self, _x: &[f64], _law: &[f64], _u: &[f64], out: &mut [f64]) {
            out[0] = 0.0;
        }
        fn diffusion(&self, _x: &[f64], _law: &[f64], _u: &[f64], out: &mut [f64]) {
            out[0] = 0.0;
        }
        fn jump(&self, _x: &[f64], _law: &[f64], _u: &[f64], _mark: usize, out: &mut [f64]) {
            out[0] = 0.0;
        }
        fn running_cost(&self, _x: &[f64], _law: &[f64], _u: &[f64]) -> f64 {
            0.0
        }
        fn terminal_cost(&self, _x: &[f64], _law: &[f64]) -> f64 {
            0.0
        }
    }

    #[test]
    fn missing_kernels_are_config_errors() {
        let adj = AdjointTriplet::scalar(1.0, 0.0, vec![]);
        let err =
            delta_hamiltonian_strict(&[0.0], &[0.0], &centered(), &[0.0], &[0.0], &adj, &Bare)
                .unwrap_err();
        assert!(matches!(err, Error::MissingEvaluator("drift_delta")));
        assert!(err.to_string().starts_with("configuration error"));
    }

    #[test]
    fn lq_derivatives() {
        let m = LqModel::new(LQParams {
            b1: 0.5,
            b2: 0.0,
            b3: 1.0,
            sigma: 0.3,
            c: 1.0,
            horizon: 1.0,
            jumps: JumpSpec::none(),
        })
        .unwrap();
        let adj = AdjointTriplet::scalar(2.0, 4.0, vec![]);
        assert!(
            (hamiltonian_dx(&[1.0], &[0.0], &[0.0, 0.0], &adj, &m).unwrap()[0] - 1.2).abs() < 1e-15
        );
        assert_eq!(
            delta_hamiltonian_dxp(&[1.0], &[0.0], &[0.0, 0.0], &[3.0], &[0.0], &adj, &m).unwrap()
                [0],
            1.0
        );
    }
}
