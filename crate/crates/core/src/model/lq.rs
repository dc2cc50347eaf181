use serde::{Deserialize, Serialize};

use super::{CoefficientSet, Dims, JumpSpec, LawStats};
use crate::error::{Error, Result};
use crate::measures::{AtomSet, EmpiricalMeasure, JointEmpiricalMeasure};

/// Scalar linear-quadratic model
///
/// `dX = (b1 E[X|G] + b2 E[a|G] + b3 a) dt + sigma X dW + int gamma(z) a N~(dz, dt)`
/// with running cost `a^2 / 2` and terminal cost `(c/2)(X_T - E[X_T|G_T])^2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LQParams {
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub sigma: f64,
    pub c: f64,
    pub horizon: f64,
    pub jumps: JumpSpec,
}

impl LQParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::Config(format!(
                "horizon T = {} must be positive",
                self.horizon
            )));
        }
        if !(self.c.is_finite() && self.c >= 0.0) {
            return Err(Error::Config(format!(
                "terminal weight c = {} must be nonnegative",
                self.c
            )));
        }
        if [self.b1, self.b2, self.b3, self.sigma]
            .iter()
            .any(|v| !v.is_finite())
        {
            return Err(Error::Config(
                "drift and diffusion coefficients must be finite".into(),
            ));
        }
        JumpSpec::new(
            self.jumps.marks.clone(),
            self.jumps.intensities.clone(),
            self.jumps.gamma_values.clone(),
        )?;
        Ok(())
    }

    /// `Gamma = sum_j gamma_j^2 lambda_j`.
    pub fn gamma_l2(&self) -> f64 {
        self.jumps.gamma_l2()
    }
}

/// The LQ family as a [`CoefficientSet`].
#[derive(Clone, Debug)]
pub struct LqModel {
    params: LQParams,
}

impl LqModel {
    pub fn new(params: LQParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params })
    }

    pub fn params(&self) -> &LQParams {
        &self.params
    }
}

impl CoefficientSet for LqModel {
    fn dims(&self) -> Dims {
        Dims {
            state: 1,
            control: 1,
            noise: 1,
        }
    }

    fn jumps(&self) -> &JumpSpec {
        &self.params.jumps
    }

    fn law_stats(&self, rho: &JointEmpiricalMeasure) -> Result<LawStats> {
        let u = rho.strict_controls()?;
        let (mut mx, mut mu) = (0.0, 0.0);
        for (i, &w) in rho.weights().iter().enumerate() {
            mx += w * rho.state(i)[0];
            mu += w * u[i];
        }
        Ok(vec![mx, mu])
    }

    fn state_law_stats(&self, mu: &EmpiricalMeasure) -> LawStats {
        let mut m = 0.0;
        for (i, &w) in mu.weights().iter().enumerate() {
            m += w * mu.atom(i)[0];
        }
        vec![m]
    }

    fn drift(&self, _x: &[f64], law: &[f64], u: &[f64], out: &mut [f64]) {
        let p = &self.params;
        out[0] = p.b1 * law[0] + p.b2 * law[1] + p.b3 * u[0];
    }

    fn diffusion(&self, x: &[f64], _law: &[f64], _u: &[f64], out: &mut [f64]) {
        out[0] = self.params.sigma * x[0];
    }

    fn jump(&self, _x: &[f64], _law: &[f64], u: &[f64], mark: usize, out: &mut [f64]) {
        out[0] = self.params.jumps.gamma_values[mark] * u[0];
    }

    fn running_cost(&self, _x: &[f64], _law: &[f64], u: &[f64]) -> f64 {
        0.5 * u[0] * u[0]
    }

    fn terminal_cost(&self, x: &[f64], law: &[f64]) -> f64 {
        let d = x[0] - law[0];
        0.5 * self.params.c * d * d
    }

    fn drift_dx(&self, _x: &[f64], _law: &[f64], _u: &[f64], out: &mut [f64]) -> Result<()> {
        out[0] = 0.0;
        Ok(())
    }

    fn diffusion_dx(&self, _x: &[f64], _law: &[f64], _u: &[f64], out: &mut [f64]) -> Result<()> {
        out[0] = self.params.sigma;
        Ok(())
    }

    fn jump_dx(
        &self,
        _x: &[f64],
        _law: &[f64],
        _u: &[f64],
        _mark: usize,
        out: &mut [f64],
    ) -> Result<()> {
        out[0] = 0.0;
        Ok(())
    }

    fn running_cost_dx(&self, _x: &[f64], _law: &[f64], _u: &[f64], out: &mut [f64]) -> Result<()> {
        out[0] = 0.0;
        Ok(())
    }

    fn terminal_cost_dx(&self, x: &[f64], law: &[f64], out: &mut [f64]) -> Result<()> {
        out[0] = self.params.c * (x[0] - law[0]);
        Ok(())
    }

    fn drift_delta(
        &self,
        _x: &[f64],
        _law: &[f64],
        _u: &[f64],
        xp: &[f64],
        up: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        out[0] = self.params.b1 * xp[0] + self.params.b2 * up[0];
        Ok(())
    }

    fn diffusion_delta(
        &self,
        _x: &[f64],
        _law: &[f64],
        _u: &[f64],
        _xp: &[f64],
        _up: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        out[0] = 0.0;
        Ok(())
    }

    fn jump_delta(
        &self,
        _x: &[f64],
        _law: &[f64],
        _u: &[f64],
        _mark: usize,
        _xp: &[f64],
        _up: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        out[0] = 0.0;
        Ok(())
    }

    fn running_cost_delta(
        &self,
        _x: &[f64],
        _law: &[f64],
        _u: &[f64],
        _xp: &[f64],
        _up: &[f64],
    ) -> Result<f64> {
        Ok(0.0)
    }

    fn terminal_cost_delta(&self, x: &[f64], law: &[f64], xp: &[f64]) -> Result<f64> {
        Ok(-self.params.c * (x[0] - law[0]) * xp[0])
    }

    fn drift_delta_dxp(
        &self,
        _x: &[f64],
        _law: &[f64],
        _u: &[f64],
        _xp: &[f64],
        _up: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        out[0] = self.params.b1;
        Ok(())
    }

    fn diffusion_delta_dxp(
        &self,
        _x: &[f64],
        _law: &[f64],
        _u: &[f64],
        _xp: &[f64],
        _up: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        out[0] = 0.0;
        Ok(())
    }

    fn jump_delta_dxp(
        &self,
        _x: &[f64],
        _law: &[f64],
        _u: &[f64],
        _mark: usize,
        _xp: &[f64],
        _up: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        out[0] = 0.0;
        Ok(())
    }

    fn running_cost_delta_dxp(
        &self,
        _x: &[f64],
        _law: &[f64],
        _u: &[f64],
        _xp: &[f64],
        _up: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        out[0] = 0.0;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> LQParams {
        LQParams {
            b1: 0.3,
            b2: -0.4,
            b3: 1.0,
            sigma: 0.5,
            c: 1.0,
            horizon: 1.0,
            jumps: JumpSpec::single(2.0, 0.5).unwrap(),
        }
    }

    #[test]
    fn validation() {
        assert!(LqModel::new(params()).is_ok());
        assert!(LqModel::new(LQParams {
            horizon: 0.0,
            ..params()
        })
        .is_err());
        assert!(LqModel::new(LQParams {
            c: -1.0,
            ..params()
        })
        .is_err());
        let bad = JumpSpec {
            marks: vec![1.0],
            intensities: vec![1.0, 2.0],
            gamma_values: vec![0.0],
        };
        assert!(LqModel::new(LQParams {
            jumps: bad,
            ..params()
        })
        .is_err());
    }

    #[test]
    fn evaluators_match_formulas() {
        let m = LqModel::new(params()).unwrap();
        let law = [0.7, -0.2];
        let mut out = [0.0];
        m.drift(&[2.0], &law, &[1.5], &mut out);
        assert_eq!(out[0], 0.3 * 0.7 + (-0.4) * (-0.2) + 1.5);
        m.diffusion(&[2.0], &law, &[1.5], &mut out);
        assert_eq!(out[0], 1.0);
        m.jump(&[2.0], &law, &[1.5], 0, &mut out);
        assert_eq!(out[0], 0.75);
        assert_eq!(m.running_cost(&[2.0], &law, &[1.5]), 1.125);
        assert_eq!(m.terminal_cost(&[2.0], &[0.5]), 1.125);
    }

    #[test]
    fn law_stats_are_means() {
        let m = LqModel::new(params()).unwrap();
        let rho =
            JointEmpiricalMeasure::strict(1, vec![1.0, 3.0], 1, vec![-1.0, 1.0], vec![0.25, 0.75])
                .unwrap();
        assert_eq!(m.law_stats(&rho).unwrap(), vec![2.5, 0.5]);
    }
}
