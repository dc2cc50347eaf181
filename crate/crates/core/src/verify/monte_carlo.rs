use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::Serialize;

use super::{optimal_rule, perturbed_rule, sim_spec, CheckReport};
use crate::config::{Perturbation, SimSection, Tolerances};
use crate::error::{Error, Result};
use crate::flow::{apply_a1, fp_step, measure_path, shift_adjoint, Dictionary};
use crate::measures::neumaier_sum;
use crate::model::{CoefficientSet, LQParams, LqModel, NoiseMode};
use crate::riccati::{solve_riccati, RiccatiSolution};
use crate::simulate::{
    estimate_cost, paired_difference, simulate_scenarios, simulate_strict, ControlRule,
    CostEstimate, ParticleCloud, Recording, SimSpec,
};

/// Weight of the time-discretization bias in the value comparison.
const BIAS_WEIGHT: f64 = 5.0;

fn costs(
    model: &LqModel,
    rule: &ControlRule,
    spec: &SimSpec,
    scenarios: u64,
) -> Result<CostEstimate> {
    let clouds = simulate_scenarios(model, rule, spec, 0..scenarios)?;
    estimate_cost(&clouds, model)
}

/// `J(0, N(m, s^2)) = (beta_0 (s^2 + m^2) + eta_0 m^2) / 2`.
fn gaussian_value(sol: &RiccatiSolution, mean: f64, std: f64) -> f64 {
    0.5 * (sol.beta[0] * (std * std + mean * mean) + sol.eta[0] * mean * mean)
}

/// Optimality of the LQ feedback under common random numbers.
///
/// Every perturbation must cost at least as much as the optimal feedback up
/// to `tol.mc_sigmas` paired standard errors, and the optimal cost must match
/// `J(0, mu_0)` within `tol.mc_sigmas` standard errors plus five times the
/// step-doubling bias estimate. Fewer than two scenarios is inconclusive.
pub fn check_optimality(
    params: &LQParams,
    sim: &SimSection,
    perturbations: &[Perturbation],
    tol: &Tolerances,
) -> Result<CheckReport> {
    let sol = solve_riccati(params, sim.mode, sim.riccati_steps)?;
    let model = LqModel::new(params.clone())?;
    let spec = sim_spec(sim, params.horizon, sim.mode, Recording::Summary);
    let n = sim.scenarios as u64;
    let optimal = costs(&model, &optimal_rule(&sol), &spec, n)?;

    let mut coarse = spec.clone();
    coarse.dt = 2.0 * spec.dt;
    coarse.noise_dt = Some(spec.noise_step());
    let coarse_cost = costs(&model, &optimal_rule(&sol), &coarse, n)?;
    let bias = paired_difference(&coarse_cost, &optimal)?.mean.abs();

    let target = gaussian_value(&sol, sim.x0.mean, sim.x0.std);
    let gap = (optimal.mean - target).abs();
    let bound = tol.mc_sigmas * optimal.std_error + BIAS_WEIGHT * bias;

    let mut report = CheckReport::new("optimality", bound).measuring("|cost - J(0, mu0)|", false);
    report.samples = sim.scenarios;
    report.max_residual = gap;
    report.mean_residual = gap;
    report.std_error = Some(optimal.std_error);
    report.stat("optimal_cost", optimal.mean);
    report.stat("value_at_initial_law", target);
    report.stat("step_doubling_bias", bias);
    if sim.scenarios < 2 {
        report.inconclusive = true;
        report.passed = false;
        report.note("fewer than two scenarios: no standard error available");
        return Ok(report);
    }
    if !(gap <= bound) {
        report.fail(format!(
            "|cost - J(0, mu_0)| = {gap:.3e} exceeds {bound:.3e}"
        ));
    }

    for p in perturbations {
        let perturbed = costs(&model, &perturbed_rule(&sol, p), &spec, n)?;
        let diff = paired_difference(&perturbed, &optimal)?;
        let unpaired = (perturbed.std_error.powi(2) + optimal.std_error.powi(2)).sqrt();
        report.stat(&format!("{p}.cost"), perturbed.mean);
        report.stat(&format!("{p}.gap"), diff.mean);
        report.stat(&format!("{p}.paired_se"), diff.std_error);
        report.stat(&format!("{p}.unpaired_se"), unpaired);
        if diff.std_error > unpaired {
            report.note(format!(
                "{p}: paired standard error exceeds the unpaired one"
            ));
        }
        if diff.mean < -tol.mc_sigmas * diff.std_error {
            report.fail(format!(
                "{p} beats the optimal feedback: gap {:.3e}, paired se {:.3e}",
                diff.mean, diff.std_error
            ));
        }
    }
    Ok(report)
}

/// One step of the pairing table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FpRow {
    pub step: usize,
    pub t: f64,
    pub phi: String,
    pub predicted: f64,
    pub observed: f64,
    pub residual: f64,
}

/// Result of [`check_fp`] with the pairing table of the first coarse scenario.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FpOutcome {
    pub report: CheckReport,
    pub table: Vec<FpRow>,
}

struct FpRun {
    /// Cumulative residual per test function.
    cumulative: Vec<f64>,
    rows: Vec<FpRow>,
    event_times: Vec<f64>,
    synchronized: bool,
    jump_gap: f64,
}

fn fp_run<C: CoefficientSet + ?Sized>(
    cloud: &ParticleCloud,
    coeffs: &C,
    dictionary: &Dictionary,
    keep_rows: bool,
) -> Result<FpRun> {
    let path = measure_path(cloud)?;
    let mut cumulative = vec![0.0; dictionary.len()];
    let mut rows = Vec::new();
    let mut jump_gap: f64 = 0.0;
    for (k, w) in path.windows(2).enumerate() {
        let (a, b) = (&w[0], &w[1]);
        let pairings = fp_step(&a.mu, &a.kernel, b.t - a.t, &[], coeffs, dictionary)?;
        let shifts = b
            .jumps
            .iter()
            .map(|ev| apply_a1(&ev.mu, &ev.kernel, ev.mark, coeffs))
            .collect::<Result<Vec<_>>>()?;
        if let [ev] = b.jumps.as_slice() {
            let post = shift_adjoint(&ev.mu, &ev.kernel, ev.mark, coeffs)?;
            for phi in &dictionary.entries {
                let gap = post.integrate(|x| phi.value(x)) - b.mu.integrate(|x| phi.value(x));
                jump_gap = jump_gap.max(gap.abs());
            }
        }
        for (idx, (phi, pair)) in dictionary.entries.iter().zip(&pairings).enumerate() {
            let jump: f64 = shifts.iter().map(|s| s.pair(|x| phi.value(x))).sum();
            let predicted = pair.before + pair.drift + jump;
            let observed = b.mu.integrate(|x| phi.value(x));
            cumulative[idx] += observed - predicted;
            if keep_rows {
                rows.push(FpRow {
                    step: k,
                    t: a.t,
                    phi: pair.phi.clone(),
                    predicted,
                    observed,
                    residual: observed - predicted,
                });
            }
        }
    }
    let recorded: BTreeSet<usize> = cloud.jumps.iter().map(|r| r.node).collect();
    let events: BTreeSet<usize> = (0..cloud.n_nodes())
        .filter(|&k| cloud.grid.is_event_node(k))
        .collect();
    Ok(FpRun {
        cumulative,
        rows,
        event_times: cloud.jumps.iter().map(|r| r.time).collect(),
        synchronized: recorded == events,
        jump_gap,
    })
}

/// Weak-form Fokker-Planck consistency of the optimally controlled
/// common-noise cloud.
///
/// For every test function the cumulative residual
/// `<phi, mu_T> - <phi, mu_0> - sum (A0 pairing) dt - sum <phi, A1 mu_{t-}>`
/// is measured on a coarse run `(N, dt)` and a refined run `(4N, dt/2)` that
/// share jump paths and Brownian paths. Their root mean square over scenarios
/// should halve: the geometric mean of the fine/coarse ratios must lie within
/// `tol.fp_band` (relative) of 1/2. Jumps must be recorded exactly at the
/// event nodes of the grid and reproduce the post-jump law.
pub fn check_fp(
    params: &LQParams,
    sim: &SimSection,
    dictionary: &Dictionary,
    tol: &Tolerances,
) -> Result<FpOutcome> {
    if dictionary.dim != 1 {
        return Err(Error::Dimension {
            expected: 1,
            got: dictionary.dim,
        });
    }
    let sol = solve_riccati(params, NoiseMode::Common, sim.riccati_steps)?;
    let model = LqModel::new(params.clone())?;
    let rule = optimal_rule(&sol);
    let mut coarse = sim_spec(sim, params.horizon, NoiseMode::Common, Recording::Full);
    coarse.noise_dt = Some(0.5 * sim.dt);
    let mut fine = coarse.clone();
    fine.n_particles = 4 * sim.particles;
    fine.dt = 0.5 * sim.dt;

    let runs = (0..sim.scenarios as u64)
        .into_par_iter()
        .map(|s| {
            let c = simulate_strict(&model, &rule, &coarse, s)?;
            let c = fp_run(&c, &model, dictionary, s == 0)?;
            let f = simulate_strict(&model, &rule, &fine, s)?;
            let f = fp_run(&f, &model, dictionary, false)?;
            Ok((c, f))
        })
        .collect::<Result<Vec<(FpRun, FpRun)>>>()?;

    let ids = dictionary.ids();
    let rms = |pick: &dyn Fn(&(FpRun, FpRun)) -> &FpRun, k: usize| {
        (neumaier_sum(runs.iter().map(|r| pick(r).cumulative[k].powi(2))) / runs.len() as f64)
            .sqrt()
    };
    let mut report = CheckReport::new("fp", tol.fp_band)
        .measuring("relative deviation of the refinement ratio from 1/2", false);
    let mut log_ratio = Vec::new();
    let mut worst: f64 = 0.0;
    for (k, id) in ids.iter().enumerate() {
        let c = rms(&|r| &r.0, k);
        let f = rms(&|r| &r.1, k);
        worst = worst.max(c);
        report.stat(&format!("{id}.rms_coarse"), c);
        report.stat(&format!("{id}.rms_fine"), f);
        if c > 0.0 && f > 0.0 {
            report.stat(&format!("{id}.ratio"), f / c);
            log_ratio.push((f / c).ln());
        }
    }
    let ratio = if log_ratio.is_empty() {
        f64::NAN
    } else {
        (log_ratio.iter().sum::<f64>() / log_ratio.len() as f64).exp()
    };
    let deviation = (ratio / 0.5 - 1.0).abs();
    report.samples = runs.len();
    report.max_residual = deviation;
    report.mean_residual = deviation;
    report.stat("ratio_geometric_mean", ratio);
    report.stat("max_rms_coarse", worst);
    if !(deviation <= tol.fp_band) {
        report.fail(format!(
            "refinement ratio {ratio:.3} outside 0.5 +- {:.0}%",
            100.0 * tol.fp_band
        ));
    }

    let jump_gap = runs
        .iter()
        .map(|(c, f)| c.jump_gap.max(f.jump_gap))
        .fold(0.0, f64::max);
    report.stat("jump_max_gap", jump_gap);
    if jump_gap > tol.jump {
        report.fail(format!(
            "shifted law differs from the post-jump cloud by {jump_gap:.3e}"
        ));
    }
    if runs.iter().any(|(c, f)| !c.synchronized || !f.synchronized) {
        report.fail("jump records do not coincide with the event nodes of the grid");
    }
    if runs.iter().any(|(c, f)| c.event_times != f.event_times) {
        report.fail("coarse and refined runs saw different jump times");
    }
    if runs.len() < 2 {
        report.inconclusive = true;
        report.passed = false;
        report.note("fewer than two scenarios: root mean squares are unreliable");
    }
    let table = runs
        .into_iter()
        .next()
        .map(|(c, _)| c.rows)
        .unwrap_or_default();
    Ok(FpOutcome { report, table })
}

struct ModeStats {
    /// Mean |jump of the cloud mean| over events.
    mean_jump: f64,
    /// Largest |jump of the mean - gamma E[alpha_{t-}]|.
    formula_gap: f64,
    /// Mean |increment of the cloud mean| over steps without events.
    mean_step: f64,
    events: usize,
}

fn mode_stats(clouds: &[ParticleCloud], gammas: &[f64]) -> ModeStats {
    let (mut jumps, mut steps, mut formula_gap) = (Vec::new(), Vec::new(), 0.0f64);
    for cloud in clouds {
        for rec in &cloud.jumps {
            let dm = rec.post_mean[0] - rec.pre_mean[0];
            jumps.push(dm.abs());
            if cloud.mode == NoiseMode::Common {
                formula_gap =
                    formula_gap.max((dm - gammas[rec.mark] * rec.pre_control_mean[0]).abs());
            }
        }
        for k in 1..cloud.n_nodes() {
            if !cloud.grid.is_event_node(k) {
                steps.push((cloud.mean_at(k)[0] - cloud.mean_at(k - 1)[0]).abs());
            }
        }
    }
    let avg = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            neumaier_sum(v.iter().copied()) / v.len() as f64
        }
    };
    ModeStats {
        mean_jump: avg(&jumps),
        formula_gap,
        mean_step: avg(&steps),
        events: jumps.len(),
    }
}

/// Common versus idiosyncratic jumps.
///
/// Without jumps both Riccati variants must agree to `tol.mode_agreement`.
/// With jumps, both modes are simulated under their own optimal feedback:
/// the mean jump of the cloud mean at common events must exceed
/// `tol.noise_ratio` times the idiosyncratic one, where a single particle
/// jumps. When every jump size is zero both statistics must vanish.
pub fn compare_noise_modes(
    params: &LQParams,
    sim: &SimSection,
    tol: &Tolerances,
) -> Result<CheckReport> {
    let free = LQParams {
        jumps: params.jumps.without_jumps(),
        ..params.clone()
    };
    let a = solve_riccati(&free, NoiseMode::Common, sim.riccati_steps)?;
    let b = solve_riccati(&free, NoiseMode::Idiosyncratic, sim.riccati_steps)?;
    let agreement = a
        .beta
        .iter()
        .zip(&b.beta)
        .chain(a.eta.iter().zip(&b.eta))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);

    let mut report = CheckReport::new("noise", tol.noise_ratio)
        .measuring("common/idiosyncratic mean-jump ratio", true);
    report.stat("riccati_mode_gap_without_jumps", agreement);
    if agreement > tol.mode_agreement {
        report.fail(format!(
            "Riccati variants differ by {agreement:.3e} without jumps"
        ));
    }

    let model = LqModel::new(params.clone())?;
    let n = sim.scenarios as u64;
    let run = |mode| -> Result<ModeStats> {
        let sol = solve_riccati(params, mode, sim.riccati_steps)?;
        let spec = sim_spec(sim, params.horizon, mode, Recording::Summary);
        let clouds = simulate_scenarios(&model, &optimal_rule(&sol), &spec, 0..n)?;
        Ok(mode_stats(&clouds, &params.jumps.gamma_values))
    };
    let common = run(NoiseMode::Common)?;
    let idio = run(NoiseMode::Idiosyncratic)?;
    report.samples = common.events + idio.events;
    report.stat("common.events", common.events as f64);
    report.stat("common.mean_jump", common.mean_jump);
    report.stat("common.jump_formula_gap", common.formula_gap);
    report.stat("common.mean_step_increment", common.mean_step);
    report.stat("idiosyncratic.events", idio.events as f64);
    report.stat("idiosyncratic.mean_jump", idio.mean_jump);
    report.stat("idiosyncratic.mean_step_increment", idio.mean_step);
    if idio.mean_step > 0.0 {
        report.stat(
            "idiosyncratic.jump_to_step_ratio",
            idio.mean_jump / idio.mean_step,
        );
    }

    if params.jumps.gamma_values.iter().all(|g| *g == 0.0) {
        report.note("all jump sizes are zero");
        if common.mean_jump != 0.0 || idio.mean_jump != 0.0 {
            report.fail("cloud mean jumps although every jump size is zero");
        }
        return Ok(report);
    }
    if common.events == 0 || idio.events == 0 {
        report.inconclusive = true;
        report.passed = false;
        report.note("no jump events in one of the modes");
        return Ok(report);
    }
    let ratio = if idio.mean_jump > 0.0 {
        common.mean_jump / idio.mean_jump
    } else {
        f64::INFINITY
    };
    report.stat("mean_jump_ratio", ratio);
    report.max_residual = ratio;
    report.mean_residual = ratio;
    if !(ratio >= tol.noise_ratio) {
        report.fail(format!(
            "common/idiosyncratic mean-jump ratio {ratio:.3} below {}",
            tol.noise_ratio
        ));
    }
    if common.formula_gap > tol.jump {
        report.fail(format!(
            "common-mode mean jump differs from gamma E[alpha] by {:.3e}",
            common.formula_gap
        ));
    }
    Ok(report)
}
