mod common;

use std::path::Path;
use std::process::{Command, Output};

use closedloop::scenario::comparable_report;
use common::scenarios_dir;

fn cli(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_closedloop"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn scenario(name: &str) -> String {
    scenarios_dir().join(name).to_string_lossy().into_owned()
}

#[test]
fn run_writes_csv_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(
        &["run", &scenario("flow1_affine.json"), "--csv", "t.csv", "--json", "r.json"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("ok fitted_rate=1.50"));
    let csv = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert!(csv.starts_with("t,x_0,distance,envelope\n"));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    for key in ["equilibrium", "fitted_rate", "theoretical_rate", "bound_satisfied", "max_violation", "runtime_seconds", "timestamp"] {
        assert!(report.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn quiet_suppresses_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["run", "--quiet", &scenario("equilibrium_affine.json")], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
}

#[test]
fn violations_exit_2_and_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["run", &scenario("flow1_factor2.json")], dir.path());
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(dir.path().join("bad.json"), r#"{"kind": "flow1", "instance": {"family": "affine_dirac", "epsilon": 1, "theta0": 0}}"#).unwrap();
    let out = cli(&["run", "bad.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("instance.mu"));

    std::fs::write(
        dir.path().join("diverge.json"),
        r#"{"kind": "flow1", "instance": {"family": "affine_dirac", "mu": 1, "epsilon": 2, "theta0": 0}, "solver": {"T": 2}, "outputs": {"json_path": "diverge.report.json"}}"#,
    )
    .unwrap();
    let out = cli(&["run", "diverge.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("diverge.report.json")).unwrap()).unwrap();
    assert_eq!(report["status"], "error");
    assert_eq!(report["error"]["kind"], "ConditionViolated");
}

#[test]
fn batch_exit_code_is_the_worst_and_respects_the_thread_cap() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_closedloop"))
        .args(["run", &scenario("equilibrium_affine.json"), &scenario("flow1_factor2.json"), &scenario("curvature_two_point.json")])
        .env("CLOSEDLOOP_THREADS", "2")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().filter(|l| !l.starts_with(' ')).count(), 3);

    let out = cli(
        &["run", &scenario("equilibrium_affine.json"), &scenario("flow1_affine.json"), "--csv", "x.csv"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn check_prints_the_normalized_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["check", &scenario("flow1_affine.json")], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["derived"]["rho"], 0.25);
    assert_eq!(v["solver"]["t0"], 1.0);
}

#[test]
fn report_prints_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    cli(&["run", "--quiet", &scenario("flow2_gauss_bad_omega.json"), "--json", "r.json"], dir.path());
    let out = cli(&["report", "r.json"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("status=violation"));
    assert!(text.contains("FAIL damping_condition"));
}

#[test]
fn reruns_are_byte_identical_apart_from_timing() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["flow2_affine.json", "ispds_saddle.json", "curvature_cycle.json"] {
        let mut seen = Vec::new();
        for run in 0..2 {
            let (csv, json) = (format!("{run}.csv"), format!("{run}.json"));
            let out = cli(&["run", "--quiet", &scenario(name), "--csv", &csv, "--json", &json], dir.path());
            assert_eq!(out.status.code(), Some(0), "{name}");
            let report = comparable_report(&std::fs::read_to_string(dir.path().join(&json)).unwrap()).unwrap();
            seen.push((std::fs::read(dir.path().join(&csv)).unwrap(), report));
        }
        assert_eq!(seen[0], seen[1], "{name}");
    }
}
