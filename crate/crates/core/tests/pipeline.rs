use std::path::Path;

use cvcert::harness::{certify, oracle, verify, Experiment, Expectation};
use cvcert::{BudgetMode, ExperimentConfig};

fn config(json: &str) -> ExperimentConfig {
    ExperimentConfig::from_json(json, Path::new(".")).unwrap()
}

const VACUUM2: &str = r#"{"m": 2, "O": [[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]], "D": [1,1,1,1], "Oprime": [[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]], "x": [0,0,0,0], "nvec": [0,0]}"#;

fn vacuum_cfg(scenario: &str, budget: &str) -> ExperimentConfig {
    config(&format!(
        r#"{{"network": {VACUUM2}, "test": {{"f_t": 0.8, "alpha": 0.2, "epsilon": 0.1}}, "scenario": {scenario}, "budget_mode": "{budget}", "seed": 42}}"#
    ))
}

#[test]
fn honest_vacuum_run_accepts_with_calibrated_epsilon() {
    let cfg = vacuum_cfg(r#"{"backend": "gaussian", "recipe": "honest"}"#, "reduced:10000");
    let exp = Experiment::new(cfg.clone()).unwrap();
    assert!((exp.test.epsilon - 0.0947).abs() < 5e-4, "{}", exp.test.epsilon);
    assert_eq!(exp.design.plan.settings.len(), 5);
    assert_eq!(exp.expected().unwrap(), Expectation::Accept);
    let v = certify(cfg, None).unwrap();
    assert!(v.verdict.accept, "{v:?}");
    assert!((v.verdict.estimate - 1.0).abs() < 4.0 * v.std_error);
}

#[test]
fn thermal_run_rejects_and_oracle_matches_bound() {
    let cfg = vacuum_cfg(r#"{"backend": "gaussian", "recipe": "noise", "channels": [{"kind": "thermal", "nbar": 0.2}]}"#, "reduced:10000");
    let o = oracle(cfg.clone()).unwrap();
    assert!((o.fidelity.unwrap() - 1.0 / 1.44).abs() < 1e-12);
    assert!(o.bound.unwrap() <= o.fidelity.unwrap());
    let v = certify(cfg, None).unwrap();
    assert!(!v.verdict.accept);
}

#[test]
fn replay_is_byte_identical() {
    let dir = std::env::temp_dir().join(format!("cvcert-replay-{}", std::process::id()));
    let cfg = vacuum_cfg(r#"{"backend": "gaussian", "recipe": "honest", "eta": 0.95}"#, "reduced:2000");
    let cfg = ExperimentConfig { test: cvcert::TestConfig::new(0.5, 0.2, 0.1).unwrap(), ..cfg };
    certify(cfg.clone(), Some(&dir.join("a"))).unwrap();
    certify(cfg, Some(&dir.join("b"))).unwrap();
    for f in ["verdict.json", "estimates.json", "plan.json", "records.csv"] {
        let a = std::fs::read(dir.join("a").join(f)).unwrap();
        let b = std::fs::read(dir.join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn heralded_photon_pipeline() {
    let bs = r#"{"m": 2, "O": [[0.7071067811865476,0,-0.7071067811865476,0],[0,0.7071067811865476,0,-0.7071067811865476],[0.7071067811865476,0,0.7071067811865476,0],[0,0.7071067811865476,0,0.7071067811865476]], "D": [1,1,1,1], "Oprime": [[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]], "x": [0,0,0,0], "nvec": [1,0]}"#;
    let cfg = config(&format!(
        r#"{{"network": {bs}, "test": {{"f_t": 0.5, "alpha": 0.2, "epsilon": 0.25}}, "scenario": {{"backend": "fock", "recipe": "honest", "cutoff": 6}},
            "postselection": {{"ancillas": [2], "occupations": [0]}}, "budget_mode": "reduced:100000", "seed": 3}}"#
    ));
    let o = oracle(cfg.clone()).unwrap();
    assert!((o.postselection_probability.unwrap() - 0.5).abs() < 1e-12);
    assert!((o.bound.unwrap() - 1.0).abs() < 1e-9, "{o:?}");
    assert!((o.fidelity.unwrap() - 1.0).abs() < 1e-12);
    let exp = Experiment::new(cfg.clone()).unwrap();
    assert_eq!(exp.design.plan.m, 1);
    let v = certify(cfg, None).unwrap();
    assert!((v.verdict.estimate - 1.0).abs() < 5.0 * v.std_error + 1e-9, "{v:?}");
}

#[test]
fn small_verify_run_reports_rates() {
    let cfg = vacuum_cfg(r#"{"backend": "gaussian", "recipe": "honest"}"#, "reduced:10000");
    let r = verify(cfg, 10).unwrap();
    assert_eq!(r.trials, 10);
    assert_eq!(r.expectation, Expectation::Accept);
    assert!(r.acceptance_wilson95.0 <= r.acceptance_rate && r.acceptance_rate <= r.acceptance_wilson95.1);
    assert_eq!("reduced:10000".parse::<BudgetMode>().unwrap(), BudgetMode::Reduced(10000));
}
