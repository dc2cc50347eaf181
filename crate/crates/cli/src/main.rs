mod input;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mfc_core::config::{ExperimentConfig, Provenance};
use mfc_core::flow::Dictionary;
use mfc_core::model::{LQParams, LqModel};
use mfc_core::riccati::{solve_riccati, RiccatiSolution};
use mfc_core::simulate::{estimate_cost, simulate_scenarios, Recording};
use mfc_core::verify::{
    check_bsde, check_chattering, check_fp, check_hjb, check_optimality, check_smp,
    compare_noise_modes, optimal_rule, random_measures, sim_spec, CheckReport, FpRow,
};
use serde::Serialize;

/// Extended mean-field control with Poissonian common noise: LQ solver,
/// particle simulation and numerical cross-checks.
#[derive(Parser)]
#[command(name = "mfc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output file. Defaults to a file named after the subcommand in `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `sim.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Maximum number of worker threads.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the Riccati system and write `t,beta,eta` as CSV.
    Riccati(Common),
    /// Simulate the optimally controlled cloud and write per-node means as CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Per-particle trajectory CSV; implied by `output.trajectories`.
        #[arg(long)]
        trajectories: Option<PathBuf>,
    },
    /// Monte Carlo cost of the optimal feedback against the value function.
    Cost(Common),
    /// Chattering approximation of a two-atom relaxed rule.
    Chattering(Common),
    /// Run one cross-check and write its report as JSON.
    Verify {
        check: Check,
        #[command(flatten)]
        common: Common,
        /// Pairing table CSV (fp only).
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Compare the common and idiosyncratic noise regimes.
    CompareNoise(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum Check {
    Smp,
    Bsde,
    Hjb,
    Fp,
    Optimality,
    Noise,
}

/// Failure modes of a run, by exit code.
enum Failure {
    /// Unusable configuration, arguments or files: exit 2.
    Usage(String),
    /// A check ran and failed: exit 1.
    Check(String),
}

impl From<mfc_core::Error> for Failure {
    fn from(e: mfc_core::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(format!("i/o error: {e}"))
    }
}

type Outcome = Result<(), Failure>;

struct Context {
    cfg: ExperimentConfig,
    params: LQParams,
    provenance: Provenance,
    out: PathBuf,
}

impl Context {
    fn new(common: &Common, default_name: &str) -> Result<Self, Failure> {
        let mut cfg = input::load_config(&common.config).map_err(Failure::Usage)?;
        if let Some(seed) = common.seed {
            cfg.sim.seed = seed;
        }
        if let Some(n) = common.threads {
            if n == 0 {
                return Err(Failure::Usage("--threads must be at least 1".into()));
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Failure::Usage(format!("cannot start worker pool: {e}")))?;
        }
        let params = cfg.lq_params()?;
        let provenance = Provenance::of(&cfg);
        let out = common
            .out
            .clone()
            .unwrap_or_else(|| Path::new(&cfg.output.dir).join(default_name));
        Ok(Self {
            cfg,
            params,
            provenance,
            out,
        })
    }

    fn solve(&self) -> Result<RiccatiSolution, Failure> {
        Ok(solve_riccati(
            &self.params,
            self.cfg.sim.mode,
            self.cfg.sim.riccati_steps,
        )?)
    }

    fn header(&self) -> String {
        format!(
            "# mfc {} config_hash={} seed={}",
            self.provenance.version, self.provenance.config_hash, self.provenance.seed
        )
    }

    fn write_json<T: Serialize>(&self, value: &T) -> Outcome {
        let mut text =
            serde_json::to_string_pretty(value).map_err(|e| Failure::Usage(e.to_string()))?;
        text.push('\n');
        create(&self.out)?.write_all(text.as_bytes())?;
        Ok(())
    }

    fn report(&self, report: CheckReport) -> Outcome {
        let report = report.with_provenance(self.provenance.clone());
        self.write_json(&report)?;
        verdict(&report)
    }
}

/// Opens `path` for writing, creating missing parent directories.
fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|e| Failure::Usage(format!("{}: cannot create: {e}", dir.display())))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Usage(format!("{}: cannot create: {e}", path.display())))
}

fn verdict(report: &CheckReport) -> Outcome {
    println!("{}", report.summary());
    for note in &report.notes {
        println!("  {note}");
    }
    if report.failed() {
        Err(Failure::Check(format!("check {} failed", report.check)))
    } else {
        Ok(())
    }
}

fn riccati(common: &Common) -> Outcome {
    let ctx = Context::new(common, "riccati.csv")?;
    let sol = ctx.solve()?;
    let mut w = create(&ctx.out)?;
    writeln!(w, "{}", ctx.header())?;
    writeln!(w, "t,beta,eta")?;
    for k in 0..sol.times.len() {
        writeln!(
            w,
            "{:.16e},{:.16e},{:.16e}",
            sol.times[k], sol.beta[k], sol.eta[k]
        )?;
    }
    w.flush()?;
    println!("beta_0 = {:.16e}, eta_0 = {:.16e}", sol.beta[0], sol.eta[0]);
    Ok(())
}

fn simulate(common: &Common, trajectories: Option<&Path>) -> Outcome {
    let ctx = Context::new(common, "simulate.csv")?;
    let sol = ctx.solve()?;
    let sim = &ctx.cfg.sim;
    let traj_path = trajectories.map(Path::to_path_buf).or_else(|| {
        ctx.cfg
            .output
            .trajectories
            .then(|| Path::new(&ctx.cfg.output.dir).join("trajectories.csv"))
    });
    let recording = if traj_path.is_some() {
        Recording::Full
    } else {
        Recording::Summary
    };
    let model = LqModel::new(ctx.params.clone())?;
    let spec = sim_spec(sim, ctx.params.horizon, sim.mode, recording);
    let clouds = simulate_scenarios(&model, &optimal_rule(&sol), &spec, 0..sim.scenarios as u64)?;

    let mut w = create(&ctx.out)?;
    writeln!(w, "{}", ctx.header())?;
    writeln!(w, "scenario,node,time,mean,control_mean,event")?;
    for cloud in &clouds {
        for (node, t) in cloud.grid.times.iter().enumerate() {
            writeln!(
                w,
                "{},{},{:.16e},{:.16e},{:.16e},{}",
                cloud.scenario,
                node,
                t,
                cloud.mean_at(node)[0],
                cloud.control_mean_at(node)[0],
                u8::from(cloud.grid.is_event_node(node))
            )?;
        }
    }
    w.flush()?;
    if let Some(path) = traj_path {
        let mut w = create(&path)?;
        writeln!(w, "{}", ctx.header())?;
        for (k, cloud) in clouds.iter().enumerate() {
            cloud.write_trajectories(&mut w, k == 0)?;
        }
        w.flush()?;
    }
    let events: usize = clouds.iter().map(|c| c.jumps.len()).sum();
    println!(
        "simulated {} scenarios with {} jump events",
        clouds.len(),
        events
    );
    Ok(())
}

#[derive(Serialize)]
struct CostOutput {
    provenance: Provenance,
    cost: f64,
    std_error: f64,
    value_at_initial_law: f64,
    per_scenario: Vec<f64>,
}

fn cost(common: &Common) -> Outcome {
    let ctx = Context::new(common, "cost.json")?;
    let sol = ctx.solve()?;
    let sim = &ctx.cfg.sim;
    let model = LqModel::new(ctx.params.clone())?;
    let spec = sim_spec(sim, ctx.params.horizon, sim.mode, Recording::Summary);
    let clouds = simulate_scenarios(&model, &optimal_rule(&sol), &spec, 0..sim.scenarios as u64)?;
    let estimate = estimate_cost(&clouds, &model)?;
    let (m, s) = (sim.x0.mean, sim.x0.std);
    let value = 0.5 * (sol.beta[0] * (s * s + m * m) + sol.eta[0] * m * m);
    println!(
        "cost {:.6e} +- {:.2e}, J(0, mu0) = {:.6e}",
        estimate.mean, estimate.std_error, value
    );
    ctx.write_json(&CostOutput {
        provenance: ctx.provenance.clone(),
        cost: estimate.mean,
        std_error: estimate.std_error,
        value_at_initial_law: value,
        per_scenario: estimate.per_scenario,
    })
}

fn chattering(common: &Common) -> Outcome {
    let ctx = Context::new(common, "chattering.json")?;
    let cfg = &ctx.cfg;
    let mut out = check_chattering(
        &ctx.params,
        &cfg.sim,
        &cfg.chattering,
        &cfg.verify.tolerances,
    )?;
    out.report = out.report.with_provenance(ctx.provenance.clone());
    for row in &out.rows {
        println!(
            "n = {:>4}: gap {:.3e} (paired se {:.3e}), discrepancy {:.3e}",
            row.slabs, row.gap, row.paired_se, row.discrepancy
        );
    }
    ctx.write_json(&out)?;
    verdict(&out.report)
}

fn write_table(path: &Path, header: &str, rows: &[FpRow]) -> Outcome {
    let mut w = create(path)?;
    writeln!(w, "{header}")?;
    writeln!(w, "step,t,phi,predicted,observed,residual")?;
    for r in rows {
        writeln!(
            w,
            "{},{:.16e},{},{:.16e},{:.16e},{:.16e}",
            r.step, r.t, r.phi, r.predicted, r.observed, r.residual
        )?;
    }
    w.flush()?;
    Ok(())
}

fn verify(check: Check, common: &Common, table: Option<&Path>) -> Outcome {
    let name = match check {
        Check::Smp => "smp",
        Check::Bsde => "bsde",
        Check::Hjb => "hjb",
        Check::Fp => "fp",
        Check::Optimality => "optimality",
        Check::Noise => "noise",
    };
    let ctx = Context::new(common, &format!("verify_{name}.json"))?;
    let (cfg, params) = (&ctx.cfg, &ctx.params);
    let (sim, v) = (&cfg.sim, &cfg.verify);
    let tol = &v.tolerances;
    let model = LqModel::new(params.clone())?;
    let report = match check {
        Check::Smp => {
            let sol = ctx.solve()?;
            let spec = sim_spec(sim, params.horizon, sim.mode, Recording::Full);
            let cloud = simulate_scenarios(&model, &optimal_rule(&sol), &spec, 0..1)?.remove(0);
            check_smp(&cloud, &sol, &v.u_grid, v.smp_samples, tol.smp, sim.seed)?
        }
        Check::Bsde => {
            let sol = ctx.solve()?;
            let spec = sim_spec(sim, params.horizon, sim.mode, Recording::Full);
            let clouds =
                simulate_scenarios(&model, &optimal_rule(&sol), &spec, 0..v.bsde_paths as u64)?;
            check_bsde(&clouds, &sol, sim.mode, tol)?
        }
        Check::Hjb => {
            let samples =
                random_measures(sim.seed, v.hjb_samples, v.hjb_max_atoms, params.horizon)?;
            check_hjb(&ctx.solve()?, &samples, tol.hjb)?
        }
        Check::Fp => {
            let out = check_fp(params, sim, &Dictionary::standard(1), tol)?;
            if let Some(path) = table {
                write_table(path, &ctx.header(), &out.table)?;
            }
            out.report
        }
        Check::Optimality => check_optimality(params, sim, &v.perturbations, tol)?,
        Check::Noise => compare_noise_modes(params, sim, tol)?,
    };
    ctx.report(report)
}

fn compare_noise(common: &Common) -> Outcome {
    let ctx = Context::new(common, "compare_noise.json")?;
    let report = compare_noise_modes(&ctx.params, &ctx.cfg.sim, &ctx.cfg.verify.tolerances)?;
    ctx.report(report)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Riccati(c) => riccati(c),
        Command::Simulate {
            common,
            trajectories,
        } => simulate(common, trajectories.as_deref()),
        Command::Cost(c) => cost(c),
        Command::Chattering(c) => chattering(c),
        Command::Verify {
            check,
            common,
            table,
        } => verify(*check, common, table.as_deref()),
        Command::CompareNoise(c) => compare_noise(c),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("mfc: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("mfc: error: {msg}");
            ExitCode::from(2)
        }
    }
}
