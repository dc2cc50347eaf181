use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = r#"{
  "model": {"b1": 0.2, "b2": 0.3, "b3": 1.0, "sigma": 0.4, "c": 1.5, "T": 1.0},
  "jumps": {"marks": [{"z": 1.0, "lambda": 2.0, "gamma": 0.5}]},
  "sim": {"particles": 40, "scenarios": 3, "dt": 0.05, "seed": 7, "riccati_steps": 1000},
  "verify": {"smp_samples": 20, "hjb_samples": 20, "bsde_paths": 2},
  "chattering": {"slabs": [2, 8]}
}"#;

/// Closed-form instance: beta_t = 1 / (2 - t), eta = -beta.
const CLOSED_FORM: &str = r#"{
  "model": {"b1": 0.0, "b2": 0.0, "b3": 1.0, "sigma": 0.0, "c": 1.0, "T": 1.0},
  "sim": {"particles": 10, "scenarios": 1, "dt": 0.1, "seed": 1},
  "verify": {"hjb_samples": 50}
}"#;

fn mfc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn run(dir: &TempDir, cfg: &Path, args: &[&str], out: &str) -> (Output, PathBuf) {
    let out_path = dir.path().join(out);
    let mut full: Vec<&str> = args.to_vec();
    full.extend([
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    (mfc(&full), out_path)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn riccati_csv_ends_at_the_terminal_condition() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "cfg.json", SMALL);
    let (o, out) = run(&dir, &cfg, &["riccati"], "r.csv");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(
        lines[0].starts_with("# mfc ")
            && lines[0].contains("config_hash=")
            && lines[0].contains(env!("CARGO_PKG_VERSION"))
    );
    assert_eq!(lines[1], "t,beta,eta");
    assert_eq!(lines.len(), 2 + 1001);
    let last: Vec<f64> = lines
        .last()
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(last, vec![1.0, 1.5, -1.5]);
    let first_field = lines[2].split(',').nth(1).unwrap();
    let mantissa = first_field
        .split('e')
        .next()
        .unwrap()
        .replace(['.', '-'], "");
    assert_eq!(mantissa.len(), 17);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "cfg.json", SMALL);
    for args in [
        &["riccati"][..],
        &["simulate"],
        &["cost"],
        &["verify", "smp"],
        &["verify", "bsde"],
        &["chattering"],
    ] {
        let (a, pa) = run(&dir, &cfg, args, "a.out");
        let (b, pb) = run(&dir, &cfg, args, "b.out");
        assert_eq!(a.status.code(), b.status.code());
        assert_eq!(
            std::fs::read(pa).unwrap(),
            std::fs::read(pb).unwrap(),
            "{args:?}"
        );
    }
}

#[test]
fn missing_config_is_a_usage_error() {
    let o = mfc(&["riccati", "--config", "/nonexistent/cfg.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("cannot read config"));
}

#[test]
fn malformed_json_reports_its_line() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "bad.json", "{\n  \"model\": {\n    \"b1\": ,\n  }\n}");
    let (o, _) = run(&dir, &cfg, &["riccati"], "r.csv");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn schema_violations_report_their_line() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "cfg.json",
        &SMALL.replace("\"particles\": 40", "\"particles\": 1"),
    );
    let (o, _) = run(&dir, &cfg, &["riccati"], "r.csv");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("cfg.json:4:"), "{}", stderr(&o));

    let cfg = write_config(&dir, "cfg2.json", &SMALL.replace("\"seed\": 7, ", ""));
    let (o, _) = run(&dir, &cfg, &["riccati"], "r.csv");
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("seed") && stderr(&o).contains("line"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn unknown_flags_and_checks_are_usage_errors() {
    assert_eq!(
        mfc(&["riccati", "--config", "x.json", "--bogus"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        mfc(&["verify", "everything", "--config", "x.json"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(mfc(&["--help"]).status.code(), Some(0));
}

#[test]
fn hjb_on_the_closed_form_instance_passes() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "cf.json", CLOSED_FORM);
    let (o, out) = run(&dir, &cfg, &["verify", "hjb"], "hjb.json");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = json(&out);
    assert_eq!(report["passed"], true);
    assert!(report["max_residual"].as_f64().unwrap() < report["tolerance"].as_f64().unwrap());
    assert_eq!(report["samples"], 50);
    assert_eq!(report["provenance"]["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(
        report["provenance"]["config_hash"].as_str().unwrap().len(),
        64
    );
}

#[test]
fn hjb_needs_common_noise() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "cfg.json",
        &SMALL.replace("\"seed\": 7,", "\"seed\": 7, \"mode\": \"idiosyncratic\","),
    );
    let (o, _) = run(&dir, &cfg, &["verify", "hjb"], "hjb.json");
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn failing_checks_exit_with_one() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "cfg.json",
        &SMALL.replace(
            "\"bsde_paths\": 2",
            "\"bsde_paths\": 2, \"tolerances\": {\"bsde\": 1e-30}",
        ),
    );
    let (o, out) = run(&dir, &cfg, &["verify", "bsde"], "bsde.json");
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert_eq!(json(&out)["passed"], false);
}

#[test]
fn seed_override_changes_provenance_and_results() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "cfg.json", SMALL);
    let (_, a) = run(&dir, &cfg, &["cost"], "a.json");
    let (o, b) = run(&dir, &cfg, &["cost", "--seed", "99"], "b.json");
    assert_eq!(o.status.code(), Some(0));
    let (a, b) = (json(&a), json(&b));
    assert_eq!(a["provenance"]["seed"], 7);
    assert_eq!(b["provenance"]["seed"], 99);
    assert_ne!(
        a["provenance"]["config_hash"],
        b["provenance"]["config_hash"]
    );
    assert_ne!(a["cost"], b["cost"]);
    assert_eq!(a["value_at_initial_law"], b["value_at_initial_law"]);
}

#[test]
fn simulate_writes_means_and_trajectories() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "cfg.json", SMALL);
    let traj = dir.path().join("traj.csv");
    let (o, out) = run(
        &dir,
        &cfg,
        &[
            "simulate",
            "--threads",
            "1",
            "--trajectories",
            traj.to_str().unwrap(),
        ],
        "means.csv",
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let means = std::fs::read_to_string(out).unwrap();
    assert_eq!(
        means.lines().nth(1),
        Some("scenario,node,time,mean,control_mean,event")
    );
    assert!(means.lines().skip(2).any(|l| l.ends_with(",1")));
    let traj = std::fs::read_to_string(traj).unwrap();
    assert!(traj.lines().next().unwrap().contains("config_hash="));
    assert_eq!(traj.lines().nth(1), Some("scenario,particle,time,x0,u0"));
    let scenarios: std::collections::BTreeSet<&str> = traj
        .lines()
        .skip(2)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(scenarios.len(), 3);
}

#[test]
fn fp_writes_its_pairing_table() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "cfg.json", SMALL);
    let table = dir.path().join("table.csv");
    let (o, out) = run(
        &dir,
        &cfg,
        &["verify", "fp", "--table", table.to_str().unwrap()],
        "fp.json",
    );
    assert!(matches!(o.status.code(), Some(0 | 1)), "{}", stderr(&o));
    assert_eq!(json(&out)["check"], "fp");
    let text = std::fs::read_to_string(table).unwrap();
    assert_eq!(
        text.lines().nth(1),
        Some("step,t,phi,predicted,observed,residual")
    );
    assert!(text.lines().count() > 2);
}

#[test]
fn noise_comparison_and_chattering_report() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "cfg.json", SMALL);
    let (o, out) = run(&dir, &cfg, &["compare-noise"], "noise.json");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(json(&out)["stats"]["mean_jump_ratio"].as_f64().unwrap() > 1.0);

    let (o, out) = run(&dir, &cfg, &["chattering"], "chat.json");
    assert!(matches!(o.status.code(), Some(0 | 1)), "{}", stderr(&o));
    let v = json(&out);
    assert_eq!(v["rows"].as_array().unwrap().len(), 2);
    assert_eq!(v["report"]["provenance"]["seed"], 7);
}

#[test]
fn missing_output_directories_are_created() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "cfg.json", SMALL);
    let (o, out) = run(&dir, &cfg, &["verify", "smp"], "nested/deeper/smp.json");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(json(&out)["check"], "smp");
}
