use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn golden(name: &str) -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)).unwrap()
}

fn cvcert(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cvcert")).args(args).output().unwrap()
}

fn scratch(tag: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("cvcert-cli-{tag}-{}", std::process::id()));
    std::fs::remove_dir_all(&d).ok();
    d
}

#[test]
fn plan_json_matches_golden() {
    for (cfg, gold) in [("honest_vacuum.json", "plan_honest_vacuum.json"), ("lo_m3_n1.json", "plan_lo_m3_n1.json")] {
        let out = cvcert(&["plan", "--config", fixture(cfg).to_str().unwrap(), "--json"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert_eq!(String::from_utf8(out.stdout).unwrap(), golden(gold), "{cfg}");
    }
}

#[test]
fn plan_tables() {
    let out = cvcert(&["plan", "--config", fixture("honest_vacuum.json").to_str().unwrap()]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("settings (5 literal, 0 supplementary)"), "{text}");
    let v: serde_json::Value = serde_json::from_str(&golden("plan_lo_m3_n1.json")).unwrap();
    assert_eq!(v["plan"]["n_le"], 35);
    assert!(v["relevant_moments"].as_array().unwrap().len() <= 35);
    assert!(v["literal_settings"].as_u64().unwrap() <= 3 * 4);
    let out = cvcert(&["plan", "--config", fixture("displaced_squeezed.json").to_str().unwrap(), "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["plan"]["c1"], 92_333);
}

#[test]
fn invalid_epsilon_is_an_error() {
    let out = cvcert(&["plan", "--config", fixture("invalid_epsilon.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epsilon = 0.6"));
    let out = cvcert(&["certify", "--config", fixture("honest_vacuum.json").to_str().unwrap(), "--budget-mode", "fast"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn certify_exit_codes() {
    let out = cvcert(&["certify", "--config", fixture("honest_vacuum.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let out = cvcert(&["certify", "--config", fixture("thermal_vacuum.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn certify_replay_and_golden_verdict() {
    let dir = scratch("replay");
    for sub in ["a", "b"] {
        let out = cvcert(&["certify", "--config", fixture("honest_vacuum.json").to_str().unwrap(), "--out", dir.join(sub).to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0));
    }
    for f in ["verdict.json", "estimates.json", "plan.json", "records.csv"] {
        assert_eq!(std::fs::read(dir.join("a").join(f)).unwrap(), std::fs::read(dir.join("b").join(f)).unwrap(), "{f}");
    }
    assert_eq!(std::fs::read_to_string(dir.join("a/verdict.json")).unwrap(), golden("verdict_honest_vacuum.json"));
    let csv = std::fs::read_to_string(dir.join("a/records.csv")).unwrap();
    assert!(csv.starts_with("setting_id,trial_index,mode,angle_radians,outcome\n"));
    assert_eq!(csv.lines().count(), 1 + 2 * 40_000);
    let out = cvcert(&["certify", "--config", fixture("honest_vacuum.json").to_str().unwrap(), "--seed", "9", "--out", dir.join("c").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_ne!(std::fs::read(dir.join("a/records.csv")).unwrap(), std::fs::read(dir.join("c/records.csv")).unwrap());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn verify_reports_rates() {
    let dir = scratch("verify");
    let out = cvcert(&["verify", "--config", fixture("honest_vacuum.json").to_str().unwrap(), "--trials", "30", "--out", dir.to_str().unwrap(), "--json"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["trials"], 30);
    assert!(v["acceptance_rate"].as_f64().unwrap() >= 0.8);
    assert_eq!(v["meets_guarantee"], true);
    let rows = std::fs::read_to_string(dir.join("trials.csv")).unwrap();
    assert_eq!(rows.lines().count(), 31);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn nullifier_and_oracle_for_heralded_photon() {
    let out = cvcert(&["nullifier-check", "--config", fixture("heralded_photon.json").to_str().unwrap(), "--cutoff", "6", "--json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["max_annihilation"].as_f64().unwrap() <= 1e-9);
    assert!(v["postselected"]["annihilation"].as_f64().unwrap() <= 1e-9);
    let out = cvcert(&["oracle", "--config", fixture("heralded_photon.json").to_str().unwrap()]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["postselection_probability"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    assert!((v["bound"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    let out = cvcert(&["nullifier-check", "--config", fixture("heralded_photon.json").to_str().unwrap(), "--cutoff", "2"]);
    assert_eq!(out.status.code(), Some(2));
}
