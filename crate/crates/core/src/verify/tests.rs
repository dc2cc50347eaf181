use super::*;
use crate::config::{ChatteringSection, InitialSection, Tolerances, UGrid};
use crate::flow::Dictionary;
use crate::model::{JumpSpec, LQParams};
use crate::riccati::{adjoint_ansatz, solve_riccati};
use crate::simulate::simulate_strict;

fn lq(b1: f64, b2: f64, b3: f64, sigma: f64, c: f64, jumps: JumpSpec) -> LQParams {
    LQParams {
        b1,
        b2,
        b3,
        sigma,
        c,
        horizon: 1.0,
        jumps,
    }
}

fn generic() -> LQParams {
    lq(0.2, 0.3, 1.0, 0.4, 1.0, JumpSpec::single(2.0, 0.5).unwrap())
}

fn sim(n: usize, scenarios: usize, dt: f64, seed: u64) -> SimSection {
    SimSection {
        particles: n,
        scenarios,
        dt,
        noise_dt: None,
        seed,
        mode: NoiseMode::Common,
        x0: InitialSection::default(),
        riccati_steps: 10_000,
    }
}

fn optimal_cloud(
    params: &LQParams,
    mode: NoiseMode,
    n: usize,
    dt: f64,
    seed: u64,
) -> (RiccatiSolution, ParticleCloud) {
    let sol = solve_riccati(params, mode, 10_000).unwrap();
    let model = crate::model::LqModel::new(params.clone()).unwrap();
    let spec = sim_spec(&sim(n, 1, dt, seed), params.horizon, mode, Recording::Full);
    let cloud = simulate_strict(&model, &optimal_rule(&sol), &spec, 0).unwrap();
    (sol, cloud)
}

#[test]
fn copy_expectation_examples() {
    let (_, cloud) = optimal_cloud(&generic(), NoiseMode::Common, 30, 0.05, 1);
    let node = 7;
    let xs = cloud.states_at(node).unwrap();
    let m: f64 = xs.iter().sum::<f64>() / xs.len() as f64;
    assert!(copy_expectation(&cloud, node, |_, _| 1.0)
        .unwrap()
        .iter()
        .all(|v| (v - 1.0).abs() < 1e-15));
    for v in copy_expectation(&cloud, node, |_, y| y[0]).unwrap() {
        assert!((v - m).abs() < 1e-14);
    }
    for (v, x) in copy_expectation(&cloud, node, |x, y| x[0] * y[0])
        .unwrap()
        .iter()
        .zip(xs)
    {
        assert!((v - x * m).abs() < 1e-13 * (1.0 + v.abs()));
    }
    let mut single = cloud.clone();
    single.n_particles = 1;
    assert!(matches!(
        copy_expectation(&single, node, |_, _| 1.0),
        Err(Error::Config(_))
    ));
}

#[test]
fn copy_expectation_needs_recorded_nodes() {
    let params = generic();
    let sol = solve_riccati(&params, NoiseMode::Common, 1000).unwrap();
    let model = crate::model::LqModel::new(params.clone()).unwrap();
    let spec = sim_spec(
        &sim(10, 1, 0.1, 2),
        1.0,
        NoiseMode::Common,
        Recording::Summary,
    );
    let cloud = simulate_strict(&model, &optimal_rule(&sol), &spec, 0).unwrap();
    assert!(copy_expectation(&cloud, 0, |_, y| y[0]).is_ok());
    assert!(copy_expectation(&cloud, cloud.n_nodes() - 1, |_, y| y[0]).is_ok());
    assert!(matches!(
        copy_expectation(&cloud, 1, |_, y| y[0]),
        Err(Error::Config(_))
    ));
    assert!(matches!(
        copy_expectation(&cloud, cloud.n_nodes(), |_, y| y[0]),
        Err(Error::Domain(_))
    ));
}

#[test]
fn smp_without_control_channel_is_minimized_at_zero() {
    let params = lq(0.3, 0.0, 0.0, 0.4, 1.0, JumpSpec::none());
    let (sol, cloud) = optimal_cloud(&params, NoiseMode::Common, 40, 0.02, 3);
    assert!(cloud.controls.as_ref().unwrap().iter().all(|u| *u == 0.0));
    let report = check_smp(&cloud, &sol, &UGrid::default(), 50, 1e-8, 1).unwrap();
    assert!(report.passed, "{report:?}");
    assert_eq!(report.stats["max_argmin_cells"], 0.0);
}

#[test]
fn smp_holds_for_both_noise_modes() {
    for mode in [NoiseMode::Common, NoiseMode::Idiosyncratic] {
        let (sol, cloud) = optimal_cloud(&generic(), mode, 40, 0.02, 4);
        let report = check_smp(&cloud, &sol, &UGrid::default(), 60, 1e-8, 2).unwrap();
        assert!(report.passed, "{mode}: {report:?}");
        assert!(report.stats["max_argmin_cells"] <= 0.5 + 1e-9);
    }
}

fn smp_point(sol: &RiccatiSolution, cloud: &ParticleCloud, node: usize, i: usize) -> SmpPoint {
    let t = cloud.grid.times[node];
    let xs = cloud.states_at(node).unwrap();
    let us = cloud.controls_at(node).unwrap();
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let mu = us.iter().sum::<f64>() / us.len() as f64;
    SmpPoint {
        x: vec![xs[i]],
        adj: adjoint_ansatz(sol, t, xs[i], m),
        law: vec![m, mu],
        copies: xs
            .iter()
            .zip(us)
            .map(|(&x, &u)| (vec![x], vec![u], adjoint_ansatz(sol, t, x, m)))
            .collect(),
    }
}

#[test]
fn shifting_the_adjoint_moves_the_argmin_by_minus_b3() {
    let params = generic();
    let (sol, cloud) = optimal_cloud(&params, NoiseMode::Common, 20, 0.05, 5);
    let model = crate::model::LqModel::new(params.clone()).unwrap();
    let grid = UGrid {
        min: -6.0,
        max: 6.0,
        points: 12_001,
    };
    let values = grid.values();
    for (node, i) in [(0, 0), (5, 3), (12, 19)] {
        let mut point = smp_point(&sol, &cloud, node, i);
        let (k0, _) = grid_argmin(&values, |u| smp_objective(&model, &point, &[u])).unwrap();
        assert!((values[k0] - cloud.controls_at(node).unwrap()[i]).abs() <= grid.spacing());
        point.adj.p[0] += 1.0;
        let (k1, _) = grid_argmin(&values, |u| smp_objective(&model, &point, &[u])).unwrap();
        let shift = values[k1] - values[k0];
        assert!(
            (shift + params.b3).abs() <= 2.0 * grid.spacing(),
            "shift {shift}"
        );
    }
}

#[test]
fn smp_argmin_is_stable_under_grid_refinement() {
    let (sol, cloud) = optimal_cloud(&generic(), NoiseMode::Common, 20, 0.05, 6);
    let model = crate::model::LqModel::new(generic()).unwrap();
    let coarse = UGrid {
        min: -5.0,
        max: 5.0,
        points: 201,
    };
    let fine = UGrid {
        points: 401,
        ..coarse.clone()
    };
    for node in [0, 4, 9, 15] {
        let point = smp_point(&sol, &cloud, node, 2);
        let (a, _) =
            grid_argmin(&coarse.values(), |u| smp_objective(&model, &point, &[u])).unwrap();
        let (b, _) = grid_argmin(&fine.values(), |u| smp_objective(&model, &point, &[u])).unwrap();
        assert!((coarse.values()[a] - fine.values()[b]).abs() <= coarse.spacing() + 1e-12);
    }
}

#[test]
fn bsde_residual_vanishes_for_frozen_dynamics() {
    let params = lq(0.3, 0.0, 0.0, 0.0, 1.0, JumpSpec::none());
    let (sol, cloud) = optimal_cloud(&params, NoiseMode::Common, 25, 0.02, 7);
    let report = check_bsde(&[cloud], &sol, NoiseMode::Common, &Tolerances::default()).unwrap();
    assert!(report.passed, "{report:?}");
    assert!(report.max_residual < 1e-12, "{}", report.max_residual);
}

#[test]
fn bsde_closed_form_solution() {
    let params = lq(0.0, 0.0, 1.0, 0.0, 1.0, JumpSpec::none());
    let (sol, cloud) = optimal_cloud(&params, NoiseMode::Common, 25, 0.01, 8);
    for (t, b) in sol.times.iter().zip(&sol.beta) {
        assert!((b - 1.0 / (2.0 - t)).abs() < 1e-12);
    }
    let report = check_bsde(&[cloud], &sol, NoiseMode::Common, &Tolerances::default()).unwrap();
    assert!(report.passed, "{report:?}");
    assert!(report.max_residual < 1e-7);
    assert!(report.stats["terminal_max_residual"] < 1e-12);
}

#[test]
fn swapping_the_jump_formula_flips_the_jump_identity() {
    let params = lq(0.2, 0.3, 1.0, 0.4, 1.0, JumpSpec::single(3.0, 0.8).unwrap());
    let tol = Tolerances::default();
    for mode in [NoiseMode::Common, NoiseMode::Idiosyncratic] {
        let (sol, cloud) = optimal_cloud(&params, mode, 30, 0.02, 9);
        assert!(!cloud.jumps.is_empty());
        let other = if mode == NoiseMode::Common {
            NoiseMode::Idiosyncratic
        } else {
            NoiseMode::Common
        };
        let right = check_bsde(std::slice::from_ref(&cloud), &sol, mode, &tol).unwrap();
        let wrong = check_bsde(std::slice::from_ref(&cloud), &sol, other, &tol).unwrap();
        assert!(right.passed, "{mode}: {right:?}");
        assert!(right.stats["jump_max_excess"] <= tol.jump);
        assert!(!wrong.passed, "{mode}: {wrong:?}");
        assert!(wrong.stats["jump_max_excess"] > 1e-4);
    }
}

#[test]
fn bsde_requires_full_recording() {
    let params = generic();
    let sol = solve_riccati(&params, NoiseMode::Common, 1000).unwrap();
    let model = crate::model::LqModel::new(params.clone()).unwrap();
    let spec = sim_spec(
        &sim(10, 1, 0.1, 2),
        1.0,
        NoiseMode::Common,
        Recording::Summary,
    );
    let cloud = simulate_strict(&model, &optimal_rule(&sol), &spec, 0).unwrap();
    assert!(matches!(
        check_bsde(&[cloud], &sol, NoiseMode::Common, &Tolerances::default()),
        Err(Error::Config(_))
    ));
    assert!(matches!(
        check_bsde(&[], &sol, NoiseMode::Common, &Tolerances::default()),
        Err(Error::Empty(_))
    ));
}

#[test]
fn hjb_residual_is_small_with_jumps() {
    let sol = solve_riccati(&generic(), NoiseMode::Common, 10_000).unwrap();
    let samples = random_measures(3, 40, 16, 1.0).unwrap();
    let report = check_hjb(&sol, &samples, None).unwrap();
    assert!(report.passed, "{report:?}");
    assert!(report.stats["minimizer_max_gap"] < 1e-10);
    assert_eq!(report.samples, 40);
}

#[test]
fn hjb_without_control_channel_cancels_term_by_term() {
    let params = lq(0.4, 0.0, 0.0, 0.7, 2.0, JumpSpec::none());
    let sol = solve_riccati(&params, NoiseMode::Common, 10_000).unwrap();
    let model = crate::model::LqModel::new(params).unwrap();
    for s in random_measures(4, 20, 8, 1.0).unwrap() {
        let (r, gap) = hjb_residual(&sol, &model, s.t, &s.mu).unwrap();
        assert_eq!(gap, 0.0);
        let (db, de) = sol.derivative_fd(s.t);
        let m = s.mu.mean()[0];
        let m2 = s.mu.integrate(|x| x[0] * x[0]);
        let direct = 0.5 * (db + 0.49 * sol.beta_at(s.t)) * m2
            + 0.5 * de * m * m
            + 0.4 * (sol.beta_at(s.t) + sol.eta_at(s.t)) * m * m;
        assert!((r - direct).abs() < 1e-10, "{r} vs {direct}");
        assert!(r.abs() < 1e-6);
    }
}

#[test]
fn hjb_detects_a_wrong_solution_and_rejects_idiosyncratic_mode() {
    let mut sol = solve_riccati(&generic(), NoiseMode::Common, 10_000).unwrap();
    let samples = random_measures(5, 20, 6, 1.0).unwrap();
    let tol = 1e-6 + 10.0 * sol.midpoint_residual();
    sol.eta
        .iter_mut()
        .enumerate()
        .for_each(|(k, e)| *e += 1e-2 * k as f64 / 10_000.0);
    let report = check_hjb(&sol, &samples, Some(tol)).unwrap();
    assert!(!report.passed);
    let idio = solve_riccati(&generic(), NoiseMode::Idiosyncratic, 1000).unwrap();
    assert!(matches!(
        check_hjb(&idio, &samples, None),
        Err(Error::Config(_))
    ));
}

#[test]
fn optimality_examples() {
    let tol = Tolerances::default();
    let perturbations = [
        Perturbation::Offset { delta: 0.0 },
        Perturbation::GainScale { factor: 1.5 },
        Perturbation::TimeShift { shift: 0.2 },
    ];
    let report =
        check_optimality(&generic(), &sim(100, 8, 0.01, 10), &perturbations, &tol).unwrap();
    assert!(report.passed, "{report:?}");
    assert_eq!(report.stats["offset(0).gap"], 0.0);
    assert_eq!(report.stats["offset(0).paired_se"], 0.0);
    assert!(report.stats["gain_scale(1.5).gap"] > 0.0);
    for p in &perturbations[1..] {
        assert!(
            report.stats[&format!("{p}.paired_se")] <= report.stats[&format!("{p}.unpaired_se")]
        );
    }
}

#[test]
fn offset_without_control_channel_costs_exactly_the_running_cost() {
    let params = lq(0.3, 0.0, 0.0, 0.4, 1.0, JumpSpec::none());
    let delta = 0.5;
    let report = check_optimality(
        &params,
        &sim(50, 4, 0.01, 11),
        &[Perturbation::Offset { delta }],
        &Tolerances::default(),
    )
    .unwrap();
    let gap = report.stats["offset(0.5).gap"];
    assert!(
        (gap - 0.5 * delta * delta * params.horizon).abs() < 1e-12,
        "{gap}"
    );
}

#[test]
fn single_scenario_is_inconclusive() {
    let report = check_optimality(
        &generic(),
        &sim(20, 1, 0.05, 12),
        &[],
        &Tolerances::default(),
    )
    .unwrap();
    assert!(report.inconclusive && !report.failed());
}

#[test]
fn fp_records_jumps_at_event_nodes() {
    let params = generic();
    let dict = Dictionary::standard(1);
    let out = check_fp(
        &params,
        &sim(40, 3, 0.05, 13),
        &dict,
        &Tolerances::default(),
    )
    .unwrap();
    assert!(out.report.stats["jump_max_gap"] <= 1e-12);
    assert!(
        !out.report.notes.iter().any(|n| n.contains("jump")),
        "{:?}",
        out.report.notes
    );
    let steps = out.table.iter().map(|r| r.step).max().unwrap() + 1;
    assert_eq!(out.table.len(), steps * dict.len());
    for row in &out.table {
        assert!((row.observed - row.predicted - row.residual).abs() < 1e-12);
    }
}

#[test]
fn fp_residual_halves_under_refinement() {
    let out = check_fp(
        &generic(),
        &sim(100, 16, 0.02, 14),
        &Dictionary::standard(1),
        &Tolerances::default(),
    )
    .unwrap();
    assert!(out.report.passed, "{:?}", out.report);
}

#[test]
fn noise_modes_without_jump_sizes_are_indistinguishable() {
    let params = lq(0.2, 0.3, 1.0, 0.4, 1.0, JumpSpec::single(2.0, 0.0).unwrap());
    let report =
        compare_noise_modes(&params, &sim(50, 2, 0.02, 15), &Tolerances::default()).unwrap();
    assert!(report.passed, "{report:?}");
    assert_eq!(report.stats["common.mean_jump"], 0.0);
    assert_eq!(report.stats["idiosyncratic.mean_jump"], 0.0);
    assert_eq!(report.stats["riccati_mode_gap_without_jumps"], 0.0);
}

#[test]
fn common_mean_jumps_by_gamma_times_mean_control() {
    let params = lq(0.2, 0.3, 1.0, 0.4, 1.0, JumpSpec::single(3.0, 1.5).unwrap());
    let report =
        compare_noise_modes(&params, &sim(200, 2, 0.01, 16), &Tolerances::default()).unwrap();
    assert!(report.passed, "{report:?}");
    assert!(report.stats["common.jump_formula_gap"] < 1e-12);
}

#[test]
fn idiosyncratic_mean_jump_shrinks_like_one_over_n() {
    let params = generic();
    let stat = |n| {
        compare_noise_modes(&params, &sim(n, 1, 0.02, 17), &Tolerances::default())
            .unwrap()
            .stats["idiosyncratic.mean_jump"]
    };
    let ratio = stat(100) / stat(400);
    assert!((3.0..5.3).contains(&ratio), "{ratio}");
}

#[test]
fn chattering_discrepancy_decays_like_one_over_n() {
    let ch = ChatteringSection {
        slope: 0.0,
        ..Default::default()
    };
    let q = two_atom_rule(&ch);
    let mut prev = f64::INFINITY;
    for n in [2, 4, 8, 16, 32] {
        let d = chattering_discrepancy(&q, n, 1.0, &[0.3], 8192).unwrap();
        assert!((d * n as f64 - 0.25).abs() < 0.01, "n = {n}: {d}");
        assert!(d < prev);
        prev = d;
    }
    assert!(matches!(
        chattering_discrepancy(
            &optimal_rule(&solve_riccati(&generic(), NoiseMode::Common, 100).unwrap()),
            2,
            1.0,
            &[0.0],
            10
        ),
        Err(Error::Kind(_))
    ));
}

#[test]
fn chattering_gap_shrinks() {
    let ch = ChatteringSection {
        slabs: vec![2, 8],
        ..Default::default()
    };
    let out = check_chattering(
        &generic(),
        &sim(60, 6, 2e-3, 18),
        &ch,
        &Tolerances::default(),
    )
    .unwrap();
    assert_eq!(out.rows.len(), 2);
    assert!(out.rows[1].gap < out.rows[0].gap, "{:?}", out.rows);
    assert!(out.rows[1].discrepancy < out.rows[0].discrepancy);
}

#[test]
fn reports_are_deterministic() {
    let run = || {
        let (sol, cloud) = optimal_cloud(&generic(), NoiseMode::Common, 20, 0.05, 19);
        serde_json::to_string(&check_smp(&cloud, &sol, &UGrid::default(), 20, 1e-8, 3).unwrap())
            .unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn report_flags_follow_tolerance() {
    let r = CheckReport::new("x", 0.5).with_residuals(&[0.1, -0.4]);
    assert!(r.passed);
    assert_eq!(r.max_residual, 0.4);
    assert!((r.mean_residual - 0.25).abs() < 1e-15);
    let r = CheckReport::new("x", 0.5).with_residuals(&[0.1, f64::NAN]);
    assert!(!r.passed && r.failed());
    assert!(r.summary().starts_with("FAIL x"));
}
