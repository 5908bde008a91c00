//! End-to-end checks of the binary: exit-code contract, output files, and
//! the verification menu.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_lora-dyn")
}

fn tempdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("lora_dyn_cli_{tag}_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

const SMALL_RUN: &str = r#"{
    "name": "smoke",
    "problem": {"model": "linear", "d": 10, "k": 8, "n": 64, "r_star": 2, "spectrum": [2.0, 1.0]},
    "init": {"kind": "lora_random", "rank": 4, "alpha": 0.01},
    "optim": {"kind": "gd", "eta": 0.05, "steps": 0},
    "seeds": [0],
    "outputs": {"dir": "unused"}
}"#;

#[test]
fn zero_step_run_writes_a_single_row_csv() {
    let dir = tempdir("zero_step");
    let cfg = write_config(&dir, "smoke.json", SMALL_RUN);
    let out = run(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.join("smoke_seed0.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2, "header plus exactly one record");
    assert!(lines[1].starts_with("0,"));
    assert!(dir.join("smoke_summary.json").exists());
}

#[test]
fn invalid_json_exits_one_without_outputs() {
    let dir = tempdir("invalid");
    let cfg = write_config(&dir, "bad.json", "{ not json");
    let out = run(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let leftovers: Vec<_> = std::fs::read_dir(&dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name() != "bad.json")
        .collect();
    assert!(leftovers.is_empty(), "partial outputs written: {leftovers:?}");

    // Unknown keys are a config error too.
    let cfg = write_config(&dir, "unknown.json", &SMALL_RUN.replace("\"name\": \"smoke\"", "\"name\": \"smoke\", \"mystery\": 1"));
    let out = run(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn preset_listing_and_materialization() {
    let out = run(&["preset"]);
    assert!(out.status.success());
    let listing = String::from_utf8_lossy(&out.stdout);
    for name in ["fig3_alignment", "fig4_over_ranked", "fig4_under_ranked", "kappa_sweep"] {
        assert!(listing.contains(name), "listing missing {name}");
    }

    let dir = tempdir("preset");
    let out = run(&["preset", "fig4_over_ranked", "--out", dir.to_str().unwrap()]);
    assert!(out.status.success());
    let body = std::fs::read_to_string(dir.join("fig4_over_ranked.json")).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&body).unwrap();
    assert_eq!(parsed["problem"]["d"], 100);
    assert_eq!(parsed["problem"]["n"], 12800);

    let out = run(&["preset", "nonexistent"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fig3_alignment"));
}

#[test]
fn verify_alignment_theorem_holds() {
    let dir = tempdir("verify31");
    let out = run(&["verify", "thm_3_1", "--out", dir.to_str().unwrap()]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("thm_3_1_report.json")).unwrap()).unwrap();
    assert_eq!(report["theorem_id"], "thm_3_1");
    assert_eq!(report["holds"], true);
    assert!(report["ingredients"]["max_angle_b"].as_f64().unwrap() <= 1e-8);
}

#[test]
fn verify_expected_violation_still_exits_zero() {
    let dir = tempdir("verify_c4a1");
    // The large-init config documents a negative result: the early-phase
    // window is empty, so the linearization bound cannot be certified.
    let preset = run(&["preset", "verify_lemma_c4_alpha1", "--out", dir.to_str().unwrap()]);
    assert!(preset.status.success());
    let cfg = dir.join("verify_lemma_c4_alpha1.json");
    let out = run(&[
        "verify",
        "lemma_c4",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("VIOLATED"), "expected a reported violation: {text}");
}

#[test]
fn verify_rejects_mismatched_configs() {
    let dir = tempdir("verify_mismatch");
    // A vanilla-gd config cannot back the preconditioned contraction check.
    let preset = run(&["preset", "verify_thm_3_1", "--out", dir.to_str().unwrap()]);
    assert!(preset.status.success());
    let cfg = dir.join("verify_thm_3_1.json");
    let out = run(&[
        "verify",
        "thm_c13",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));

    let out = run(&["verify", "thm_9_99"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn one_cell_sweep_matches_plain_run() {
    let dir = tempdir("sweep1");
    let base = SMALL_RUN
        .replace("\"steps\": 0", "\"steps\": 30")
        .replace(
            "\"outputs\": {\"dir\": \"unused\"}",
            "\"outputs\": {\"dir\": \"unused\"}, \"sweep\": {\"axes\": {\"init.alpha\": [0.01]}}",
        );
    let cfg = write_config(&dir, "sweep.json", &base);
    let out = run(&["sweep", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let agg = std::fs::read_to_string(dir.join("smoke_sweep.csv")).unwrap();
    assert_eq!(agg.lines().count(), 2);

    let run_dir = tempdir("sweep1_run");
    let cfg2 = write_config(&run_dir, "run.json", &base.replace(", \"sweep\": {\"axes\": {\"init.alpha\": [0.01]}}", ""));
    let out = run(&["run", "--config", cfg2.to_str().unwrap(), "--out", run_dir.to_str().unwrap()]);
    assert!(out.status.success());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("smoke_summary.json")).unwrap()).unwrap();
    let final_risk = summary["runs"][0]["final_risk_fro"].as_f64().unwrap();
    let cell_line = agg.lines().nth(1).unwrap();
    let median: f64 = cell_line.split(',').nth(2).unwrap().parse().unwrap();
    assert!((final_risk - median).abs() <= 1e-15 * final_risk.max(1.0));

    // Empty axes are a usage error.
    let empty = base.replace("{\"init.alpha\": [0.01]}", "{}");
    let cfg3 = write_config(&dir, "empty.json", &empty);
    let out = run(&["sweep", "--config", cfg3.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["run"]).status.code(), Some(1));
    assert_eq!(run(&["run", "--config"]).status.code(), Some(1));
}
