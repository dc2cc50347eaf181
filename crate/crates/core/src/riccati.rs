//! Backward Riccati systems for the LQ model, the optimal feedback, the
//! value function, the adjoint ansatz and the quadratic-minimizer formula.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::measures::{AtomSet, EmpiricalMeasure};
use crate::model::{AdjointTriplet, LQParams, NoiseMode};

/// Smallest accepted step count.
pub const MIN_STEPS: usize = 16;

/// `(beta, eta)` on a uniform grid over `[0, T]`.
#[derive(Clone, Debug, Serialize)]
pub struct RiccatiSolution {
    pub times: Vec<f64>,
    pub beta: Vec<f64>,
    pub eta: Vec<f64>,
    pub mode: NoiseMode,
    /// `Gamma = sum_j gamma_j^2 lambda_j`.
    pub gamma_l2: f64,
    #[serde(skip)]
    pub params: LQParams,
}

/// Right-hand side `(beta', eta')` in forward time.
pub fn riccati_rhs(
    params: &LQParams,
    mode: NoiseMode,
    gamma_l2: f64,
    beta: f64,
    eta: f64,
) -> (f64, f64) {
    let s = beta + eta;
    let gb = 1.0 + gamma_l2 * beta;
    let ge = match mode {
        NoiseMode::Common => 1.0 + gamma_l2 * s,
        NoiseMode::Idiosyncratic => gb,
    };
    let b3sq = params.b3 * params.b3;
    let b23 = params.b2 + params.b3;
    let quad = b3sq * beta * beta / gb;
    let d_beta = -params.sigma * params.sigma * beta + quad;
    let d_eta = -quad - (2.0 * params.b1 - b23 * b23 * s / ge) * s;
    (d_beta, d_eta)
}

fn check_positive(gamma_l2: f64, mode: NoiseMode, t: f64, beta: f64, eta: f64) -> Result<()> {
    if !beta.is_finite() || !eta.is_finite() {
        return Err(Error::IllPosed {
            t,
            what: "solution is not finite",
        });
    }
    if 1.0 + gamma_l2 * beta <= 0.0 {
        return Err(Error::IllPosed {
            t,
            what: "1 + Gamma beta <= 0",
        });
    }
    if mode == NoiseMode::Common && 1.0 + gamma_l2 * (beta + eta) <= 0.0 {
        return Err(Error::IllPosed {
            t,
            what: "1 + Gamma (beta + eta) <= 0",
        });
    }
    Ok(())
}

/// Classical RK4, integrated backward from `beta_T = c`, `eta_T = -c`.
pub fn solve_riccati(
    params: &LQParams,
    mode: NoiseMode,
    n_steps: usize,
) -> Result<RiccatiSolution> {
    params.validate()?;
    if n_steps < MIN_STEPS {
        return Err(Error::Config(format!(
            "riccati steps {n_steps} below the minimum {MIN_STEPS}"
        )));
    }
    let gamma_l2 = params.gamma_l2();
    let horizon = params.horizon;
    let h = horizon / n_steps as f64;
    let mut beta = vec![0.0; n_steps + 1];
    let mut eta = vec![0.0; n_steps + 1];
    beta[n_steps] = params.c;
    eta[n_steps] = -params.c;
    check_positive(gamma_l2, mode, horizon, params.c, -params.c)?;

    let f = |b: f64, e: f64| riccati_rhs(params, mode, gamma_l2, b, e);
    for k in (0..n_steps).rev() {
        let (b, e) = (beta[k + 1], eta[k + 1]);
        // step of -h in forward time
        let (k1b, k1e) = f(b, e);
        let (k2b, k2e) = f(b - 0.5 * h * k1b, e - 0.5 * h * k1e);
        let (k3b, k3e) = f(b - 0.5 * h * k2b, e - 0.5 * h * k2e);
        let (k4b, k4e) = f(b - h * k3b, e - h * k3e);
        beta[k] = b - h / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b);
        eta[k] = e - h / 6.0 * (k1e + 2.0 * k2e + 2.0 * k3e + k4e);
        check_positive(gamma_l2, mode, k as f64 * h, beta[k], eta[k])?;
    }
    let times = (0..=n_steps)
        .map(|k| if k == n_steps { horizon } else { k as f64 * h })
        .collect();
    Ok(RiccatiSolution {
        times,
        beta,
        eta,
        mode,
        gamma_l2,
        params: params.clone(),
    })
}

/// The HJB route leads to the same system; one integrator serves both.
pub fn solve_riccati_hjb(
    params: &LQParams,
    mode: NoiseMode,
    n_steps: usize,
) -> Result<RiccatiSolution> {
    solve_riccati(params, mode, n_steps)
}

impl RiccatiSolution {
    pub fn horizon(&self) -> f64 {
        self.params.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn step(&self) -> f64 {
        self.horizon() / self.n_steps() as f64
    }

    /// Segment index and fraction for `t`, clamped to `[0, T]`.
    fn locate(&self, t: f64) -> (usize, f64) {
        let n = self.n_steps();
        let s = (t / self.step()).clamp(0.0, n as f64);
        let k = (s.floor() as usize).min(n - 1);
        (k, s - k as f64)
    }

    fn interp(&self, v: &[f64], t: f64) -> f64 {
        let (k, f) = self.locate(t);
        if f == 0.0 {
            v[k]
        } else {
            v[k] + f * (v[k + 1] - v[k])
        }
    }

    pub fn beta_at(&self, t: f64) -> f64 {
        self.interp(&self.beta, t)
    }

    pub fn eta_at(&self, t: f64) -> f64 {
        self.interp(&self.eta, t)
    }

    /// Right-hand side evaluated at the interpolated solution.
    pub fn rhs(&self, t: f64) -> (f64, f64) {
        riccati_rhs(
            &self.params,
            self.mode,
            self.gamma_l2,
            self.beta_at(t),
            self.eta_at(t),
        )
    }

    /// Node derivatives by fourth-order central differences, with second
    /// order one-sided stencils at the ends.
    fn node_derivative(&self, v: &[f64], k: usize) -> f64 {
        let n = self.n_steps();
        let h = self.step();
        if k >= 2 && k + 2 <= n {
            (v[k - 2] - 8.0 * v[k - 1] + 8.0 * v[k + 1] - v[k + 2]) / (12.0 * h)
        } else if k >= 1 && k < n {
            (v[k + 1] - v[k - 1]) / (2.0 * h)
        } else if k == 0 {
            (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h)
        } else {
            (3.0 * v[n] - 4.0 * v[n - 1] + v[n - 2]) / (2.0 * h)
        }
    }

    /// `(beta', eta')` at `t` from finite differences of the stored solution,
    /// independent of the right-hand side.
    pub fn derivative_fd(&self, t: f64) -> (f64, f64) {
        let (k, f) = self.locate(t);
        let lerp = |v: &[f64]| {
            let a = self.node_derivative(v, k);
            if f == 0.0 {
                a
            } else {
                a + f * (self.node_derivative(v, k + 1) - a)
            }
        };
        (lerp(&self.beta), lerp(&self.eta))
    }

    /// Max over segments of the ODE residual at the segment midpoint of the
    /// cubic Hermite interpolant through the grid values and their
    /// right-hand sides.
    pub fn midpoint_residual(&self) -> f64 {
        let h = self.step();
        let rhs = |k: usize| {
            riccati_rhs(
                &self.params,
                self.mode,
                self.gamma_l2,
                self.beta[k],
                self.eta[k],
            )
        };
        // Value and derivative of the Hermite cubic at the midpoint.
        let hermite = |y0: f64, y1: f64, d0: f64, d1: f64| {
            (
                0.5 * (y0 + y1) + h * (d0 - d1) / 8.0,
                1.5 * (y1 - y0) / h - 0.25 * (d0 + d1),
            )
        };
        let mut worst: f64 = 0.0;
        let mut left = rhs(0);
        for k in 0..self.n_steps() {
            let right = rhs(k + 1);
            let (bm, dbm) = hermite(self.beta[k], self.beta[k + 1], left.0, right.0);
            let (em, dem) = hermite(self.eta[k], self.eta[k + 1], left.1, right.1);
            let (db, de) = riccati_rhs(&self.params, self.mode, self.gamma_l2, bm, em);
            worst = worst.max((dbm - db).abs()).max((dem - de).abs());
            left = right;
        }
        worst
    }

    /// Feedback gains `(A, B)` with `alpha = -A m - B (x - m)`.
    pub fn gains(&self, t: f64) -> (f64, f64) {
        let (beta, eta) = (self.beta_at(t), self.eta_at(t));
        let p = &self.params;
        let gb = 1.0 + self.gamma_l2 * beta;
        let ge = match self.mode {
            NoiseMode::Common => 1.0 + self.gamma_l2 * (beta + eta),
            NoiseMode::Idiosyncratic => gb,
        };
        ((p.b2 + p.b3) * (beta + eta) / ge, p.b3 * beta / gb)
    }
}

/// Optimal feedback at state `x` given the conditional mean `cond_mean`.
pub fn optimal_control(sol: &RiccatiSolution, t: f64, x: f64, cond_mean: f64) -> f64 {
    let (a, b) = sol.gains(t);
    -a * cond_mean - b * (x - cond_mean)
}

/// `J(t, mu) = (beta_t E[X^2] + eta_t (E X)^2) / 2`.
pub fn value_function(sol: &RiccatiSolution, t: f64, mu: &EmpiricalMeasure) -> f64 {
    let (mut m1, mut m2) = (0.0, 0.0);
    for (i, &w) in mu.weights().iter().enumerate() {
        let x = mu.atom(i)[0];
        m1 += w * x;
        m2 += w * x * x;
    }
    0.5 * (sol.beta_at(t) * m2 + sol.eta_at(t) * m1 * m1)
}

/// `p = beta x + eta m`, `P = beta sigma x` and the per-mark `K`.
pub fn adjoint_ansatz(sol: &RiccatiSolution, t: f64, x: f64, cond_mean: f64) -> AdjointTriplet {
    let (beta, eta) = (sol.beta_at(t), sol.eta_at(t));
    let (a, _) = sol.gains(t);
    let alpha = optimal_control(sol, t, x, cond_mean);
    let mean_alpha = -a * cond_mean;
    let k_core = match sol.mode {
        NoiseMode::Common => beta * alpha + eta * mean_alpha,
        NoiseMode::Idiosyncratic => beta * alpha,
    };
    AdjointTriplet::scalar(
        beta * x + eta * cond_mean,
        beta * sol.params.sigma * x,
        sol.params
            .jumps
            .gamma_values
            .iter()
            .map(|g| g * k_core)
            .collect(),
    )
}

/// Minimizer of `F(xi) = a E[xi^2] + b E[xi X] + c (E xi)^2 + d E[xi]` over
/// random variables on the atoms of `X`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticMinimum {
    /// `xi*` at each atom of `X`.
    pub minimizer: Vec<f64>,
    pub value: f64,
}

pub fn quadratic_minimizer(
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    x: &EmpiricalMeasure,
) -> Result<QuadraticMinimum> {
    if !(a > 0.0 && a + c > 0.0) {
        return Err(Error::Domain(format!(
            "quadratic minimizer needs a > 0 and a + c > 0, got a = {a}, c = {c}"
        )));
    }
    if x.dim() != 1 {
        return Err(Error::Dimension {
            expected: 1,
            got: x.dim(),
        });
    }
    let (mut m, mut m2) = (0.0, 0.0);
    for (i, &w) in x.weights().iter().enumerate() {
        m += w * x.atom(i)[0];
        m2 += w * x.atom(i)[0] * x.atom(i)[0];
    }
    let var = (m2 - m * m).max(0.0);
    let shift = b * m + d;
    let minimizer = (0..x.len())
        .map(|i| -shift / (2.0 * (a + c)) - b / (2.0 * a) * (x.atom(i)[0] - m))
        .collect();
    let value = -b * b / (4.0 * a) * var - shift * shift / (4.0 * (a + c));
    Ok(QuadraticMinimum { minimizer, value })
}

/// `F(xi)` evaluated on atoms.
pub fn quadratic_functional(
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    x: &EmpiricalMeasure,
    xi: &[f64],
) -> f64 {
    let (mut e2, mut ex, mut e1) = (0.0, 0.0, 0.0);
    for (i, &w) in x.weights().iter().enumerate() {
        e2 += w * xi[i] * xi[i];
        ex += w * xi[i] * x.atom(i)[0];
        e1 += w * xi[i];
    }
    a * e2 + b * ex + c * e1 * e1 + d * e1
}
