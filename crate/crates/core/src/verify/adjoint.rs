use rand::RngExt;
use rayon::prelude::*;

use super::CheckReport;
use crate::config::{Tolerances, UGrid};
use crate::error::{Error, Result};
use crate::measures::neumaier_sum;
use crate::model::{
    delta_hamiltonian_with_stats, hamiltonian_with_stats, AdjointTriplet, CoefficientSet, LqModel,
    NoiseMode,
};
use crate::riccati::{adjoint_ansatz, RiccatiSolution};
use crate::simulate::{substream, ParticleCloud, Purpose};

/// Inputs of the maximum-principle objective at one particle: its state and
/// adjoint, the joint-law statistics and the independent copies
/// `(X_j, alpha_j, adjoint_j)`.
#[derive(Clone, Debug)]
pub struct SmpPoint {
    pub x: Vec<f64>,
    pub adj: AdjointTriplet,
    pub law: Vec<f64>,
    pub copies: Vec<(Vec<f64>, Vec<f64>, AdjointTriplet)>,
}

/// `H(x, u, rho, adj) + E'[dH/drho(X', alpha', rho, adj')(x, u)]`.
pub fn smp_objective<C: CoefficientSet + ?Sized>(
    coeffs: &C,
    point: &SmpPoint,
    u: &[f64],
) -> Result<f64> {
    let h = hamiltonian_with_stats(coeffs, &point.x, u, &point.law, &point.adj)?;
    let terms = point
        .copies
        .iter()
        .map(|(xj, aj, adj)| {
            delta_hamiltonian_with_stats(coeffs, xj, aj, &point.law, &point.x, u, adj)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(h + neumaier_sum(terms.iter().copied()) / point.copies.len().max(1) as f64)
}

/// Index and value of the smallest `f` over `grid`; ties keep the first.
pub fn grid_argmin(grid: &[f64], mut f: impl FnMut(f64) -> Result<f64>) -> Result<(usize, f64)> {
    let mut best = (usize::MAX, f64::INFINITY);
    for (k, &u) in grid.iter().enumerate() {
        let v = f(u)?;
        if v < best.1 {
            best = (k, v);
        }
    }
    if best.0 == usize::MAX {
        return Err(Error::Empty("control grid"));
    }
    Ok(best)
}

fn strict_full(cloud: &ParticleCloud) -> Result<()> {
    if cloud.relaxed {
        return Err(Error::Kind("check needs a strict cloud"));
    }
    if !cloud.has_trajectories() {
        return Err(Error::Config(
            "check needs a cloud simulated with full recording".into(),
        ));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    neumaier_sum(v.iter().copied()) / v.len() as f64
}

/// Samples `(node, particle)` pairs of an LQ cloud driven by the optimal
/// feedback and checks that the recorded control minimizes the
/// maximum-principle objective over `u_grid`: the grid argmin lies within one
/// cell of it and no grid value undercuts it by more than `tol`.
pub fn check_smp(
    cloud: &ParticleCloud,
    sol: &RiccatiSolution,
    u_grid: &UGrid,
    samples: usize,
    tol: f64,
    seed: u64,
) -> Result<CheckReport> {
    strict_full(cloud)?;
    let model = LqModel::new(sol.params.clone())?;
    let grid = u_grid.values();
    let h = u_grid.spacing();
    let mut rng = substream(seed, cloud.scenario, Purpose::Verify, 0);
    let picks: Vec<(usize, usize)> = (0..samples)
        .map(|_| {
            (
                rng.random_range(0..cloud.n_nodes()),
                rng.random_range(0..cloud.n_particles),
            )
        })
        .collect();

    let outcomes = picks
        .par_iter()
        .map(|&(node, i)| {
            let t = cloud.grid.times[node];
            let xs = cloud.states_at(node).expect("recorded");
            let us = cloud.controls_at(node).expect("recorded");
            let m = mean(xs);
            let law = vec![m, mean(us)];
            let copies: Vec<_> = xs
                .iter()
                .zip(us)
                .map(|(&x, &u)| (vec![x], vec![u], adjoint_ansatz(sol, t, x, m)))
                .collect();
            let point = SmpPoint {
                x: vec![xs[i]],
                adj: adjoint_ansatz(sol, t, xs[i], m),
                law,
                copies,
            };
            let alpha = us[i];
            let at_alpha = smp_objective(&model, &point, &[alpha])?;
            let (k, best) = grid_argmin(&grid, |u| smp_objective(&model, &point, &[u]))?;
            Ok(((grid[k] - alpha).abs() / h, (at_alpha - best).max(0.0)))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;

    let undercuts: Vec<f64> = outcomes.iter().map(|o| o.1).collect();
    let mut report = CheckReport::new("smp", tol).with_residuals(&undercuts);
    let worst_cells = outcomes.iter().fold(0.0, |m: f64, o| m.max(o.0));
    report.stat("max_argmin_cells", worst_cells);
    report.stat("grid_spacing", h);
    if worst_cells > 1.0 + 1e-9 {
        report.fail(format!(
            "grid argmin is {worst_cells:.3} cells away from the optimal control"
        ));
    }
    if report.max_residual > tol {
        report.fail(format!(
            "grid value undercuts the optimum by {:.3e}",
            report.max_residual
        ));
    }
    Ok(report)
}

/// Checks the adjoint equation along LQ clouds driven by the optimal
/// feedback of `sol`, with `p = beta x + eta m`, `P = beta sigma x` and the
/// jump component of `formula`:
///
/// * terminal identity `p_T = c (X_T - m_T)` to `tol.terminal`;
/// * interior drift identity
///   `-(sigma P + b1 E p) = beta' x + eta' m + s (b1 m + b2 E alpha) + b3 (beta alpha + eta E alpha)`
///   to `tol.bsde`, with `beta'`, `eta'` from finite differences of the solution;
/// * jump identity `p(t) - p(t-) = K` at every event, to `tol.jump` beyond the
///   finite-cloud bound (`0` for common clouds, `|eta gamma alpha| / N` for
///   idiosyncratic ones).
pub fn check_bsde(
    clouds: &[ParticleCloud],
    sol: &RiccatiSolution,
    formula: NoiseMode,
    tol: &Tolerances,
) -> Result<CheckReport> {
    if clouds.is_empty() {
        return Err(Error::Empty("clouds"));
    }
    let p = &sol.params;
    let (mut terminal, mut drift, mut jump_res, mut jump_excess) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for cloud in clouds {
        strict_full(cloud)?;
        let last = cloud.n_nodes() - 1;
        let horizon = cloud.grid.times[last];
        let xs = cloud.states_at(last).expect("recorded");
        let m = mean(xs);
        let (bt, et) = (sol.beta_at(horizon), sol.eta_at(horizon));
        terminal.extend(xs.iter().map(|&x| (bt * x + et * m - p.c * (x - m)).abs()));

        for k in 0..last {
            let t = cloud.grid.times[k];
            let xs = cloud.states_at(k).expect("recorded");
            let us = cloud.controls_at(k).expect("recorded");
            let (m, ea) = (mean(xs), mean(us));
            let (beta, eta) = (sol.beta_at(t), sol.eta_at(t));
            let (db, de) = sol.derivative_fd(t);
            let s = beta + eta;
            for (&x, &a) in xs.iter().zip(us) {
                let lhs = -(p.sigma * beta * p.sigma * x + p.b1 * s * m);
                let rhs =
                    db * x + de * m + s * (p.b1 * m + p.b2 * ea) + p.b3 * (beta * a + eta * ea);
                drift.push((lhs - rhs).abs());
            }
        }

        let n = cloud.n_particles as f64;
        for rec in &cloud.jumps {
            let gamma = p.jumps.gamma_values[rec.mark];
            let (beta, eta) = (sol.beta_at(rec.time), sol.eta_at(rec.time));
            let ea = rec.pre_control_mean[0];
            let dm = rec.post_mean[0] - rec.pre_mean[0];
            for &a in &rec.pre_controls {
                let dp = beta * gamma * a + eta * dm;
                let k = match formula {
                    NoiseMode::Common => gamma * (beta * a + eta * ea),
                    NoiseMode::Idiosyncratic => gamma * beta * a,
                };
                let bound = match cloud.mode {
                    NoiseMode::Common => 0.0,
                    NoiseMode::Idiosyncratic => (eta * gamma * a).abs() / n,
                };
                let r = (dp - k).abs();
                jump_res.push(r);
                jump_excess.push((r - bound).max(0.0));
            }
        }
    }

    let max = |v: &[f64]| v.iter().fold(0.0, |m: f64, r| m.max(*r));
    let mut report = CheckReport::new("bsde", tol.bsde).with_residuals(&drift);
    report.stat("terminal_max_residual", max(&terminal));
    report.stat("drift_max_residual", report.max_residual);
    report.stat("jump_max_residual", max(&jump_res));
    report.stat("jump_max_excess", max(&jump_excess));
    report.stat("jump_samples", jump_res.len() as f64);
    report.stat("paths", clouds.len() as f64);
    report.note(format!(
        "jump component checked against the {formula}-noise formula"
    ));
    if !report.passed {
        report.notes.push(format!(
            "drift identity residual {:.3e} exceeds {:.3e}",
            report.max_residual, tol.bsde
        ));
    }
    if max(&terminal) > tol.terminal {
        report.fail(format!(
            "terminal identity residual {:.3e} exceeds {:.3e}",
            max(&terminal),
            tol.terminal
        ));
    }
    if max(&jump_excess) > tol.jump {
        report.fail(format!(
            "jump identity exceeds its bound by {:.3e}",
            max(&jump_excess)
        ));
    }
    if jump_res.is_empty() {
        report.note("no jump events; jump identity not exercised");
    }
    Ok(report)
}
