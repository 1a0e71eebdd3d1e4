//! Black-box tests of the `ofrl` binary: exit codes, error wording, and
//! deterministic artifacts.

use std::path::Path;
use std::process::{Command, Output};

fn ofrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ofrl"))
        .args(args)
        .output()
        .expect("binary should spawn")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn negative_dt_exits_1_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let out = ofrl(&[
        "simulate",
        "--set",
        "sim.dt=-0.001",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("sim.dt"), "stderr: {}", stderr(&out));
}

#[test]
fn missing_config_file_exits_1() {
    let out = ofrl(&["simulate", "--config", "/nonexistent/x.toml"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn divergent_run_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = ofrl(&[
        "simulate",
        "--set",
        "gains.kc=60",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(text.contains("diverged"), "stdout: {text}");
}

#[test]
fn weights_dimension_mismatch_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let wpath = dir.path().join("w.txt");
    std::fs::write(&wpath, "1.0 2.0\n").unwrap();
    let out = ofrl(&[
        "evaluate",
        "--weights",
        wpath.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("2 entries"), "stderr: {}", stderr(&out));
}

#[test]
fn unknown_sweep_gain_exits_1() {
    let out = ofrl(&["sweep", "--gain", "zeta", "--values", "1.0"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_verify_suite_exits_1() {
    let out = ofrl(&["verify", "bogus"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_flag_exits_1() {
    let out = ofrl(&["simulate", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_exits_0() {
    let out = ofrl(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
}

fn read_csv(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap()
}

#[test]
fn identical_invocations_produce_byte_identical_csv() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    for dir in [&dir_a, &dir_b] {
        let out = ofrl(&[
            "simulate",
            "--set",
            "sim.t_final=1.0",
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    }
    assert_eq!(
        read_csv(dir_a.path(), "two_state_trajectory.csv"),
        read_csv(dir_b.path(), "two_state_trajectory.csv")
    );
    assert_eq!(
        read_csv(dir_a.path(), "two_state_evaluation.csv"),
        read_csv(dir_b.path(), "two_state_evaluation.csv")
    );
}

#[test]
fn evaluate_with_learned_weights_matches_simulate_tail() {
    // Self-consistency: feeding the critic weights from a converged run back
    // through `evaluate` reproduces the final cost within 2%.
    let dir = tempfile::tempdir().unwrap();
    let out = ofrl(&[
        "simulate",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let report = String::from_utf8_lossy(&out.stdout).into_owned();
    let j_sim: f64 = report
        .split("final_J=")
        .nth(1)
        .and_then(|s| s.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();

    // Pull the final critic weights from the trajectory CSV.
    let csv = std::fs::read_to_string(dir.path().join("two_state_trajectory.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let last: Vec<&str> = csv.lines().last().unwrap().split(',').collect();
    let wc: Vec<&str> = header
        .iter()
        .zip(&last)
        .filter(|(h, _)| h.starts_with("Wc_"))
        .map(|(_, v)| *v)
        .collect();
    assert_eq!(wc.len(), 3);
    let wpath = dir.path().join("wc.txt");
    std::fs::write(&wpath, wc.join(" ")).unwrap();

    let out = ofrl(&[
        "evaluate",
        "--weights",
        wpath.to_str().unwrap(),
        "--set",
        "plant.xhat0=[-6.0, 6.0]",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let report = String::from_utf8_lossy(&out.stdout).into_owned();
    let j_eval: f64 = report
        .split("final_J=")
        .nth(1)
        .and_then(|s| s.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();
    assert!(
        (j_eval - j_sim).abs() / j_sim < 0.02,
        "evaluate J {j_eval} vs simulate J {j_sim}"
    );
    assert!(report.contains("GPOPS-II reference"));
}
