//! Runs every shipped verification preset through the bound evaluators and
//! checks the reported outcome, including the documented negative result.

use lora_dyn::config::{Expectation, ExperimentConfig};
use lora_dyn::presets;
use lora_dyn::verify::verify;
use lora_dyn_core::theory::TheoremId;
use std::path::PathBuf;

fn tempdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("lora_dyn_verify_{tag}_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn check(theorem: &str, preset: &str, expect_holds: bool) {
    let body = presets::lookup(preset).unwrap_or_else(|| panic!("preset {preset} missing"));
    let cfg = ExperimentConfig::from_json(body.as_bytes()).unwrap();
    let dir = tempdir(preset);
    let outcome = verify(TheoremId::parse(theorem).unwrap(), &cfg, &dir).unwrap();
    assert!(outcome.acceptable, "{theorem} via {preset} not acceptable");
    assert_eq!(
        outcome.report.holds, expect_holds,
        "{theorem} via {preset}: holds = {}, ingredients {:?}",
        outcome.report.holds, outcome.report.ingredients
    );
    let on_disk = dir.join(format!("{theorem}_report.json"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(on_disk).unwrap()).unwrap();
    assert_eq!(report["theorem_id"], theorem);
    println!(
        "{theorem}: holds={} margin={:.3e} ({}/{} seeds)",
        outcome.report.holds, outcome.report.margin, outcome.seeds_held, outcome.seeds_checked
    );
}

#[test]
fn right_subspace_alignment_holds() {
    check("thm_3_1", "verify_thm_3_1", true);
}

#[test]
fn left_subspace_alignment_holds() {
    check("thm_3_2", "verify_thm_3_2", true);
}

#[test]
fn one_step_init_bound_holds() {
    check("thm_3_6", "verify_thm_3_6", true);
}

#[test]
fn gd_contraction_bound_holds() {
    check("thm_c9", "verify_thm_c9", true);
}

#[test]
fn prec_contraction_bound_holds() {
    check("thm_c13", "verify_thm_c13", true);
}

#[test]
fn nonlinear_rate_holds() {
    check("thm_4_2", "verify_thm_4_2", true);
}

#[test]
fn linearization_window_holds_at_small_init() {
    check("lemma_c4", "verify_lemma_c4", true);
}

#[test]
fn linearization_window_collapses_at_unit_init() {
    // The documented negative result: an empty early-phase window. The
    // expectation metadata makes the outcome acceptable while the report
    // records the violation.
    let body = presets::lookup("verify_lemma_c4_alpha1").unwrap();
    let cfg = ExperimentConfig::from_json(body.as_bytes()).unwrap();
    assert_eq!(cfg.expect, Some(Expectation::Violation));
    let dir = tempdir("lemma_c4_alpha1");
    let outcome = verify(TheoremId::EarlyLinearization, &cfg, &dir).unwrap();
    assert!(outcome.acceptable);
    assert!(!outcome.report.holds);
    assert_eq!(outcome.report.ingredients["window"], 0.0);
}

#[test]
fn nonlinear_init_risk_holds() {
    check("lemma_d6", "verify_lemma_d6", true);
}
