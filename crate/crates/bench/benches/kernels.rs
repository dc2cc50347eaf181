use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use mfc_core::config::{InitialSection, SimSection, UGrid};
use mfc_core::flow::{fp_step, Dictionary, RelaxedKernel};
use mfc_core::measures::{fm_distance, AtomSet, EmpiricalMeasure};
use mfc_core::model::{JumpSpec, LQParams, LqModel, NoiseMode};
use mfc_core::riccati::{optimal_control, solve_riccati};
use mfc_core::simulate::{simulate_strict, Recording};
use mfc_core::verify::{check_smp, hjb_residual, optimal_rule, sim_spec};

fn params() -> LQParams {
    LQParams {
        b1: 0.2,
        b2: 0.3,
        b3: 1.0,
        sigma: 0.4,
        c: 1.0,
        horizon: 1.0,
        jumps: JumpSpec::single(2.0, 0.5).unwrap(),
    }
}

fn sim(particles: usize, dt: f64) -> SimSection {
    SimSection {
        particles,
        scenarios: 1,
        dt,
        noise_dt: None,
        seed: 1,
        mode: NoiseMode::Common,
        x0: InitialSection::default(),
        riccati_steps: 10_000,
    }
}

/// Deterministic scalar measure with `n` atoms.
fn measure(n: usize, phase: f64) -> EmpiricalMeasure {
    let points = (0..n)
        .map(|i| (i as f64 * 0.7 + phase).sin() * 2.0)
        .collect();
    let weights: Vec<f64> = (0..n)
        .map(|i| 1.0 + (i as f64 * 1.3 + phase).cos().abs())
        .collect();
    let total: f64 = weights.iter().sum();
    EmpiricalMeasure::from_flat(1, points, weights.iter().map(|w| w / total).collect()).unwrap()
}

fn kernels(c: &mut Criterion) {
    let p = params();
    let model = LqModel::new(p.clone()).unwrap();
    let sol = solve_riccati(&p, NoiseMode::Common, 10_000).unwrap();

    let (a, b) = (measure(32, 0.0), measure(32, 0.4));
    c.bench_function("fm_distance_32x32", |bench| {
        bench.iter(|| fm_distance(black_box(&a), black_box(&b)).unwrap())
    });

    c.bench_function("solve_riccati_10k", |bench| {
        bench.iter(|| solve_riccati(black_box(&p), NoiseMode::Common, 10_000).unwrap())
    });

    let spec = sim_spec(&sim(1000, 1e-2), 1.0, NoiseMode::Common, Recording::Summary);
    let rule = optimal_rule(&sol);
    c.bench_function("simulate_1000_particles_100_steps", |bench| {
        bench.iter(|| simulate_strict(&model, &rule, black_box(&spec), 0).unwrap())
    });

    let mu = measure(64, 0.1);
    let m = mu.mean()[0];
    let controls: Vec<f64> = (0..64)
        .map(|i| optimal_control(&sol, 0.3, mu.atom(i)[0], m))
        .collect();
    let kernel = RelaxedKernel::dirac(1, &controls);
    let dict = Dictionary::standard(1);
    c.bench_function("fp_step_64_atoms", |bench| {
        bench.iter(|| fp_step(black_box(&mu), &kernel, 1e-2, &[0], &model, &dict).unwrap())
    });

    let mu16 = measure(16, 0.2);
    c.bench_function("hjb_residual_16_atoms", |bench| {
        bench.iter(|| hjb_residual(&sol, &model, black_box(0.4), black_box(&mu16)).unwrap())
    });

    let full = sim_spec(&sim(100, 2e-2), 1.0, NoiseMode::Common, Recording::Full);
    let cloud = simulate_strict(&model, &rule, &full, 0).unwrap();
    let grid = UGrid::default();
    c.bench_function("check_smp_10_points", |bench| {
        bench.iter(|| check_smp(black_box(&cloud), &sol, &grid, 10, 1e-8, 1).unwrap())
    });
}

criterion_group!(benches, kernels);
criterion_main!(benches);
