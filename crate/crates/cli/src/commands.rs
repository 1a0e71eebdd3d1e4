//! Subcommand implementations. Exit-code contract:
//! 0 success, 1 usage/config error, 2 divergence, 3 verification failure.

use nalgebra::{DMatrix, DVector};
use ofrl::barrier::BarrierLimits;
use ofrl::learner::policy;
use ofrl::plant::{two_state_scenario, PlantModel, Scenario};
use ofrl::sim::{
    evaluation_rollout, filter_equivalence_check, lemma1_check, lemma2_check, run_closed_loop,
    RunStatus, SimConfig, SimLog,
};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

use crate::config::{load_config, resolve_config, RunSetup};
use crate::output::{gain_summary, safety_violations, write_csv, RunReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;
pub const EXIT_VERIFY_FAILED: i32 = 3;

/// GPOPS-II reference costs from the source comparison tables; external
/// constants, never computed here.
pub const GPOPS_REFERENCE: [(&str, f64); 2] = [("two_state", 55.17), ("manipulator", 11.68)];

fn load(config: Option<&str>, sets: &[String]) -> Result<RunSetup, i32> {
    let result = match config {
        Some(path) => load_config(path, sets),
        None => resolve_config("", sets),
    };
    result.map_err(|e| {
        eprintln!("error: {e}");
        EXIT_USAGE
    })
}

/// Learning run followed by a frozen-weight rollout of the learned critic.
///
/// The headline `final J` is the cost of the trajectory under the learned
/// controller û(ŝ, Ŵc*) restarted from x(0) with a matched initial
/// estimate; the learning-phase trajectory cost is reported alongside.
pub struct SimulateOutcome {
    pub learning: SimLog,
    pub evaluation: Option<SimLog>,
}

impl SimulateOutcome {
    pub fn final_cost(&self) -> f64 {
        self.evaluation
            .as_ref()
            .map(|e| e.final_cost)
            .unwrap_or(self.learning.final_cost)
    }

    pub fn status(&self) -> RunStatus {
        match &self.evaluation {
            Some(e) if !self.learning.status.is_diverged() => e.status,
            _ => self.learning.status,
        }
    }
}

pub fn run_simulate_pipeline(scenario: &mut Scenario, sim: &SimConfig) -> SimulateOutcome {
    let learning = run_closed_loop(scenario, sim);
    if learning.status.is_diverged() {
        return SimulateOutcome {
            learning,
            evaluation: None,
        };
    }
    let wc_final = learning.last().wc.clone();
    let xhat0_saved = std::mem::replace(&mut scenario.xhat0, scenario.x0.clone());
    let evaluation = evaluation_rollout(scenario, &wc_final, sim);
    scenario.xhat0 = xhat0_saved;
    SimulateOutcome {
        learning,
        evaluation: Some(evaluation),
    }
}

pub fn cmd_simulate(config: Option<&str>, sets: &[String], out: &Path) -> i32 {
    let mut setup = match load(config, sets) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let started = std::time::Instant::now();
    let outcome = run_simulate_pipeline(&mut setup.scenario, &setup.sim);

    let traj_path = out.join(format!("{}_trajectory.csv", setup.scenario.name));
    let mut outputs = vec![traj_path.clone()];
    if let Err(e) = write_csv(&traj_path, &setup.scenario, &outcome.learning) {
        eprintln!("error: cannot write {}: {e}", traj_path.display());
        return EXIT_USAGE;
    }
    let mut violations = safety_violations(&setup.scenario, &outcome.learning);
    if let Some(eval) = &outcome.evaluation {
        let eval_path = out.join(format!("{}_evaluation.csv", setup.scenario.name));
        if let Err(e) = write_csv(&eval_path, &setup.scenario, eval) {
            eprintln!("error: cannot write {}: {e}", eval_path.display());
            return EXIT_USAGE;
        }
        violations += safety_violations(&setup.scenario, eval);
        outputs.push(eval_path);
    }

    let report = RunReport {
        scenario: setup.scenario.name.clone(),
        gains: gain_summary(&setup.scenario),
        learning_cost: outcome.evaluation.as_ref().map(|_| outcome.learning.final_cost),
        final_cost: outcome.final_cost(),
        status: outcome.status(),
        runtime_s: started.elapsed().as_secs_f64(),
        safety_violations: violations,
        outputs,
    };
    report.print();
    if report.status.is_diverged() {
        EXIT_DIVERGED
    } else {
        EXIT_OK
    }
}

pub fn parse_weights_file(path: &str, expected_len: usize) -> Result<DVector<f64>, String> {
    let text =
        std::fs::read_to_string(path).map_err(|e| format!("cannot read weights file {path}: {e}"))?;
    let mut values = Vec::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("");
        for token in line.split([',', ' ', '\t']).filter(|t| !t.is_empty()) {
            let v: f64 = token
                .parse()
                .map_err(|_| format!("invalid weight entry `{token}` in {path}"))?;
            if !v.is_finite() {
                return Err(format!("non-finite weight entry `{token}` in {path}"));
            }
            values.push(v);
        }
    }
    if values.len() != expected_len {
        return Err(format!(
            "weights file {path} has {} entries but the scenario basis has {expected_len}",
            values.len()
        ));
    }
    Ok(DVector::from_vec(values))
}

pub fn cmd_evaluate(config: Option<&str>, weights: &str, sets: &[String], out: &Path) -> i32 {
    let setup = match load(config, sets) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let w = match parse_weights_file(weights, setup.scenario.basis.len()) {
        Ok(w) => w,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let started = std::time::Instant::now();
    let log = evaluation_rollout(&setup.scenario, &w, &setup.sim);
    let path = out.join(format!("{}_evaluation.csv", setup.scenario.name));
    if let Err(e) = write_csv(&path, &setup.scenario, &log) {
        eprintln!("error: cannot write {}: {e}", path.display());
        return EXIT_USAGE;
    }
    let report = RunReport {
        scenario: setup.scenario.name.clone(),
        gains: gain_summary(&setup.scenario),
        learning_cost: None,
        final_cost: log.final_cost,
        status: log.status,
        runtime_s: started.elapsed().as_secs_f64(),
        safety_violations: safety_violations(&setup.scenario, &log),
        outputs: vec![path],
    };
    report.print();
    if let Some((_, reference)) = GPOPS_REFERENCE
        .iter()
        .find(|(name, _)| *name == setup.scenario.name)
    {
        println!(
            "note: GPOPS-II reference cost for {} is {reference} (external constant, not computed)",
            setup.scenario.name
        );
    }
    if report.status.is_diverged() {
        EXIT_DIVERGED
    } else {
        EXIT_OK
    }
}

pub const SWEEP_GAINS: [&str; 9] = [
    "k", "alpha", "beta1", "kc", "ka1", "ka2", "beta", "gamma", "v",
];

pub fn cmd_sweep(
    config: Option<&str>,
    gain: &str,
    values: &[f64],
    sets: &[String],
    out: &Path,
) -> i32 {
    if !SWEEP_GAINS.contains(&gain) {
        eprintln!(
            "error: unknown gain `{gain}` (expected one of {})",
            SWEEP_GAINS.join(", ")
        );
        return EXIT_USAGE;
    }
    if values.is_empty() {
        eprintln!("error: sweep needs at least one value");
        return EXIT_USAGE;
    }
    if let Some(v) = values.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        eprintln!("error: sweep values must be positive and finite, got {v}");
        return EXIT_USAGE;
    }
    let gain_key = if gain == "v" { "gamma" } else { gain };

    let mut rows = Vec::new();
    println!("{:>12} {:>12} {:>10}", gain_key, "final_J", "status");
    for v in values {
        let mut cell_sets = sets.to_vec();
        cell_sets.push(format!("gains.{gain_key}={v}"));
        let mut setup = match load(config, &cell_sets) {
            Ok(s) => s,
            Err(code) => return code,
        };
        let outcome = run_simulate_pipeline(&mut setup.scenario, &setup.sim);
        let (cost_text, status) = if outcome.status().is_diverged() {
            ("DS".to_string(), outcome.status())
        } else {
            (format!("{:.4}", outcome.final_cost()), outcome.status())
        };
        println!("{:>12} {:>12} {:>10}", v, cost_text, format!("{status}"));
        rows.push((*v, cost_text));
    }

    let path = out.join(format!("sweep_{gain_key}.csv"));
    if let Some(dir) = path.parent() {
        let _ = std::fs::create_dir_all(dir);
    }
    let mut body = format!("{gain_key},final_J\n");
    for (v, cost) in &rows {
        body.push_str(&format!("{v},{cost}\n"));
    }
    if let Err(e) = std::fs::write(&path, body) {
        eprintln!("error: cannot write {}: {e}", path.display());
        return EXIT_USAGE;
    }
    println!("wrote {}", path.display());
    EXIT_OK
}

/// A small open-loop-stable toy plant for the equivalence suites:
/// ẋ₁ = x₂, ẋ₂ = −x₁ − 2x₂ + u on the box (−2, 2)².
pub fn toy_plant() -> PlantModel {
    PlantModel::new(
        1,
        1,
        BarrierLimits::from_bounds(&[-2.0, -2.0], &[2.0, 2.0]),
        Box::new(|x: &DVector<f64>| DVector::from_element(1, -x[0] - 2.0 * x[1])),
        Box::new(|_: &DVector<f64>| DMatrix::from_element(1, 1, 1.0)),
    )
}

struct Check {
    name: String,
    pass: bool,
    detail: String,
}

fn check(name: &str, pass: bool, detail: String) -> Check {
    Check {
        name: name.to_string(),
        pass,
        detail,
    }
}

fn five_second_cfg() -> SimConfig {
    SimConfig {
        t_final: 5.0,
        ..SimConfig::default()
    }
}

fn verify_lemma1() -> Vec<Check> {
    let cfg = five_second_cfg();
    let mut checks = Vec::new();

    let toy = toy_plant();
    let dev = lemma1_check(
        &toy,
        |_, _| DVector::zeros(1),
        &DVector::from_vec(vec![0.5, -0.5]),
        &cfg,
    );
    checks.push(match dev {
        Ok(d) => check("lemma1 toy (zero input)", d < 1e-5, format!("max deviation {d:.3e}")),
        Err(e) => check("lemma1 toy (zero input)", false, format!("{e}")),
    });

    let sc = two_state_scenario();
    let wa = sc.wa0.clone();
    let dev = lemma1_check(
        &sc.plant,
        |s: &DVector<f64>, _| policy(s, &wa, &sc.plant, &sc.basis, &sc.r),
        &DVector::from_vec(vec![-1.0, 1.0]),
        &cfg,
    );
    checks.push(match dev {
        Ok(d) => check(
            "lemma1 two-state (frozen policy)",
            d < 1e-5,
            format!("max deviation {d:.3e}"),
        ),
        Err(e) => check("lemma1 two-state (frozen policy)", false, format!("{e}")),
    });
    checks
}

fn verify_lemma2() -> Vec<Check> {
    let cfg = five_second_cfg();
    let mut checks = Vec::new();
    let base = two_state_scenario();

    let mut matched = two_state_scenario();
    matched.x0 = DVector::from_vec(vec![-1.0, 1.0]);
    matched.xhat0 = matched.x0.clone();
    let wa = base.wa0.clone();
    let control = |shat: &DVector<f64>, _: f64| policy(shat, &wa, &base.plant, &base.basis, &base.r);
    let dev = lemma2_check(&matched, control, &cfg);
    checks.push(match dev {
        Ok(d) => check(
            "lemma2 matched estimate (x̂₀ = x₀)",
            d < 1e-8,
            format!("max deviation {d:.3e}"),
        ),
        Err(e) => check("lemma2 matched estimate (x̂₀ = x₀)", false, format!("{e}")),
    });

    let wa = base.wa0.clone();
    let control = |shat: &DVector<f64>, _: f64| policy(shat, &wa, &base.plant, &base.basis, &base.r);
    let dev = lemma2_check(&base, control, &cfg);
    checks.push(match dev {
        Ok(d) => check(
            "lemma2 two-state nominal estimate",
            d < 1e-5,
            format!("max deviation {d:.3e}"),
        ),
        Err(e) => check("lemma2 two-state nominal estimate", false, format!("{e}")),
    });
    checks
}

fn verify_filter_equivalence() -> Vec<Check> {
    let cfg = five_second_cfg();
    let sc = two_state_scenario();
    let dev = filter_equivalence_check(&sc, &cfg);
    vec![match dev {
        Ok(d) => check(
            "filter equivalence (algebraic vs integrated η)",
            d < 1e-6,
            format!("max deviation {d:.3e}"),
        ),
        Err(e) => check("filter equivalence (algebraic vs integrated η)", false, format!("{e}")),
    }]
}

fn verify_safety(seed: u64) -> Vec<Check> {
    let mut checks = Vec::new();

    let sc = two_state_scenario();
    let cfg = SimConfig {
        log_decimation: 1,
        ..SimConfig::default()
    };
    let log = run_closed_loop(&sc, &cfg);
    let violations = safety_violations(&sc, &log);
    checks.push(check(
        "safety on nominal run",
        !log.status.is_diverged() && violations == 0,
        format!(
            "status {}, {violations} violations in {} samples",
            log.status,
            log.rows.len()
        ),
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = five_second_cfg();
    let mut failures = Vec::new();
    for i in 0..10 {
        let mut sc = two_state_scenario();
        sc.x0 = DVector::from_vec(vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]);
        sc.xhat0 = DVector::from_vec(vec![sc.x0[0], rng.gen_range(-2.0..2.0)]);
        let log = run_closed_loop(&sc, &cfg);
        let violations = safety_violations(&sc, &log);
        if log.status.is_diverged() || violations != 0 {
            failures.push(format!(
                "ic {i} x0=({:.3},{:.3}): status {}, {violations} violations",
                sc.x0[0], sc.x0[1], log.status
            ));
        }
    }
    checks.push(check(
        "safety on 10 randomized safe initial conditions",
        failures.is_empty(),
        if failures.is_empty() {
            format!("all runs safe (seed {seed})")
        } else {
            failures.join("; ")
        },
    ));
    checks
}

fn verify_gamma_bounds() -> Vec<Check> {
    let sc = two_state_scenario();
    let log = run_closed_loop(&sc, &SimConfig::default());
    let min = log
        .rows
        .iter()
        .map(|r| r.gamma_min_eig)
        .fold(f64::INFINITY, f64::min);
    let max = log
        .rows
        .iter()
        .map(|r| r.gamma_max_eig)
        .fold(f64::NEG_INFINITY, f64::max);
    vec![check(
        "gamma bounds (λ_min(Γ(t)) > 0, λ_max finite)",
        !log.status.is_diverged() && min > 0.0 && max.is_finite(),
        format!("λ_min over run {min:.3e}, λ_max over run {max:.3e}"),
    )]
}

fn verify_pe_metric() -> Vec<Check> {
    let sc = two_state_scenario();
    let log = run_closed_loop(&sc, &SimConfig::default());
    let min = log
        .rows
        .iter()
        .map(|r| r.pe_metric)
        .fold(f64::INFINITY, f64::min);
    vec![check(
        "pe metric positive along nominal run",
        !log.status.is_diverged() && min > 0.0,
        format!("min pe_metric over run {min:.3e}"),
    )]
}

pub const VERIFY_SUITES: [&str; 6] = [
    "lemma1",
    "lemma2",
    "filter-equivalence",
    "safety",
    "gamma-bounds",
    "pe-metric",
];

pub fn cmd_verify(suite: &str, seed: u64) -> i32 {
    let checks = match suite {
        "lemma1" => verify_lemma1(),
        "lemma2" => verify_lemma2(),
        "filter-equivalence" => verify_filter_equivalence(),
        "safety" => verify_safety(seed),
        "gamma-bounds" => verify_gamma_bounds(),
        "pe-metric" => verify_pe_metric(),
        other => {
            eprintln!(
                "error: unknown verify suite `{other}` (expected one of {})",
                VERIFY_SUITES.join(", ")
            );
            return EXIT_USAGE;
        }
    };
    let mut failed = false;
    for c in &checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
        failed |= !c.pass;
    }
    if failed {
        EXIT_VERIFY_FAILED
    } else {
        EXIT_OK
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.txt");
        std::fs::write(&path, "1.0 2.5\n-3.0 # final\n").unwrap();
        let w = parse_weights_file(path.to_str().unwrap(), 3).unwrap();
        assert_eq!(w.as_slice(), &[1.0, 2.5, -3.0]);
        assert!(parse_weights_file(path.to_str().unwrap(), 4)
            .unwrap_err()
            .contains("3 entries"));
    }

    #[test]
    fn toy_plant_is_stable_at_origin() {
        let p = toy_plant();
        let d = p.state_derivative(&DVector::zeros(2), &DVector::zeros(1));
        assert_eq!(d.amax(), 0.0);
    }

    #[test]
    fn unknown_gain_and_suite_rejected() {
        let out = std::env::temp_dir();
        assert_eq!(cmd_sweep(None, "zeta", &[1.0], &[], &out), EXIT_USAGE);
        assert_eq!(cmd_verify("bogus", 0), EXIT_USAGE);
    }
}
