//! Run and sweep execution: per-seed trajectories to CSV, summary JSON,
//! and deterministic sweep aggregation.

use crate::config::{config_hash, ExperimentConfig};
use lora_dyn_core::diagnostics::{write_csv, Outcome};
use lora_dyn_core::optim::run_training;
use lora_dyn_core::synth::make_problem;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

#[derive(Debug)]
pub enum RunError {
    Config(String),
    Science(String),
    Io(String),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(m) => write!(f, "config: {m}"),
            RunError::Science(m) => write!(f, "scientific failure: {m}"),
            RunError::Io(m) => write!(f, "io: {m}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<lora_dyn_core::Error> for RunError {
    fn from(e: lora_dyn_core::Error) -> Self {
        RunError::Config(e.to_string())
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

#[derive(Debug, Serialize)]
pub struct RunSummaryEntry {
    pub method: String,
    pub seed: u64,
    pub outcome: String,
    pub final_step: usize,
    pub final_risk_fro: f64,
    pub final_risk_op: f64,
    pub final_loss: f64,
    pub min_angle_a: f64,
    pub csv: String,
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub tool_version: &'static str,
    pub name: String,
    pub config_hash: String,
    pub runs: Vec<RunSummaryEntry>,
}

fn outcome_label(outcome: &Outcome) -> String {
    match outcome {
        Outcome::Completed => "completed".into(),
        Outcome::Diverged { step } => format!("diverged@{step}"),
        Outcome::Aborted => "aborted".into(),
    }
}

/// Executes every (method, seed) run of the config and writes one CSV per
/// run plus a summary JSON. Returns the summary; any diverged run makes the
/// caller exit with the scientific-failure code.
pub fn run_config(
    cfg: &ExperimentConfig,
    raw_bytes: &[u8],
    out_dir: &Path,
    seeds_override: Option<&[u64]>,
) -> Result<RunSummary, RunError> {
    let methods = cfg.method_list().map_err(|e| RunError::Config(e.to_string()))?;
    let seeds: Vec<u64> = seeds_override.map(|s| s.to_vec()).unwrap_or_else(|| cfg.seeds.clone());
    fs::create_dir_all(out_dir)?;
    let hash = config_hash(raw_bytes);

    let mut runs = Vec::new();
    for (label, init, optim) in &methods {
        for &seed in &seeds {
            let problem_cfg = cfg.problem.to_core(seed).map_err(|e| RunError::Config(e.to_string()))?;
            let problem = make_problem(&problem_cfg, seed)?;
            let mut traj = run_training(&problem, init, optim, cfg.record_every)?;
            traj.config_hash = hash;
            let suffix = if label.is_empty() { String::new() } else { format!("_{label}") };
            let csv_name = format!("{}{}_seed{}.csv", cfg.name, suffix, seed);
            let csv_path = out_dir.join(&csv_name);
            let mut buf = Vec::new();
            write_csv(&traj, &mut buf)?;
            fs::write(&csv_path, &buf)?;
            let last = traj.final_record().expect("at least the step-0 record");
            let min_angle = traj.records.iter().map(|r| r.angle_a).fold(f64::INFINITY, f64::min);
            runs.push(RunSummaryEntry {
                method: label.clone(),
                seed,
                outcome: outcome_label(&traj.outcome),
                final_step: last.step,
                final_risk_fro: last.risk_fro,
                final_risk_op: last.risk_op,
                final_loss: last.loss,
                min_angle_a: min_angle,
                csv: csv_name,
            });
        }
    }

    let summary = RunSummary {
        tool_version: env!("CARGO_PKG_VERSION"),
        name: cfg.name.clone(),
        config_hash: format!("{hash:016x}"),
        runs,
    };
    let summary_path = out_dir.join(format!("{}_summary.json", cfg.name));
    fs::write(&summary_path, serde_json::to_vec_pretty(&summary).expect("serializable"))?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepCell {
    pub cell: String,
    pub values: BTreeMap<String, f64>,
    pub seeds: usize,
    pub median_final_risk_fro: f64,
    pub min_final_risk_fro: f64,
    pub max_final_risk_fro: f64,
    pub median_min_angle_a: f64,
    /// Median last recorded step; with `stop_risk` set this is the median
    /// iteration count to the target.
    pub median_final_step: f64,
    pub diverged: usize,
}

/// One cell of the sweep: the base config with axis values substituted.
fn materialize_cell(
    base: &serde_json::Value,
    assignment: &BTreeMap<String, f64>,
) -> Result<ExperimentConfig, RunError> {
    let mut value = base.clone();
    for (path, v) in assignment {
        let mut cursor = &mut value;
        let parts: Vec<&str> = path.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            if i + 1 == parts.len() {
                match cursor.get_mut(part) {
                    Some(slot) => {
                        *slot = serde_json::json!(v);
                    }
                    None => {
                        let obj = cursor.as_object_mut().ok_or_else(|| {
                            RunError::Config(format!("axis path {path} does not reach an object"))
                        })?;
                        obj.insert((*part).to_string(), serde_json::json!(v));
                    }
                }
            } else {
                cursor = cursor
                    .get_mut(part)
                    .ok_or_else(|| RunError::Config(format!("axis path {path} missing segment {part}")))?;
            }
        }
    }
    // The sweep section must not survive into the per-cell config.
    if let Some(obj) = value.as_object_mut() {
        obj.remove("sweep");
    }
    let bytes = serde_json::to_vec(&value).expect("serializable");
    ExperimentConfig::from_json(&bytes).map_err(|e| RunError::Config(e.to_string()))
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Cross-product of the sweep axes times seeds; cells run concurrently up
/// to `jobs`, each cell single-threaded; the aggregate CSV is sorted by
/// cell key so output order is deterministic.
pub fn sweep_config(
    cfg: &ExperimentConfig,
    raw_bytes: &[u8],
    out_dir: &Path,
    jobs: usize,
    seeds_override: Option<&[u64]>,
) -> Result<Vec<SweepCell>, RunError> {
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| RunError::Config("sweep command needs a sweep section".into()))?;
    if sweep.axes.is_empty() || sweep.axes.values().any(|v| v.is_empty()) {
        return Err(RunError::Config("sweep axes must be non-empty".into()));
    }
    fs::create_dir_all(out_dir)?;
    let base: serde_json::Value =
        serde_json::from_slice(raw_bytes).map_err(|e| RunError::Config(e.to_string()))?;
    let seeds: Vec<u64> = seeds_override.map(|s| s.to_vec()).unwrap_or_else(|| cfg.seeds.clone());

    // Cross product in sorted-axis order.
    let axes: Vec<(&String, &Vec<f64>)> = sweep.axes.iter().collect();
    let mut assignments: Vec<BTreeMap<String, f64>> = vec![BTreeMap::new()];
    for (name, values) in &axes {
        let mut next = Vec::with_capacity(assignments.len() * values.len());
        for a in &assignments {
            for &v in *values {
                let mut b = a.clone();
                b.insert((*name).clone(), v);
                next.push(b);
            }
        }
        assignments = next;
    }

    let results: Mutex<Vec<Option<SweepCell>>> = Mutex::new(vec![None; assignments.len()]);
    let cursor = AtomicUsize::new(0);
    let workers = jobs.max(1).min(assignments.len());
    let failure: Mutex<Option<RunError>> = Mutex::new(None);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = cursor.fetch_add(1, Ordering::SeqCst);
                if idx >= assignments.len() {
                    break;
                }
                let assignment = &assignments[idx];
                let cell_result = (|| -> Result<SweepCell, RunError> {
                    let cell_cfg = materialize_cell(&base, assignment)?;
                    let methods =
                        cell_cfg.method_list().map_err(|e| RunError::Config(e.to_string()))?;
                    if methods.len() != 1 {
                        return Err(RunError::Config("sweeps take single-method configs".into()));
                    }
                    let (_, init, optim) = &methods[0];
                    let mut finals = Vec::new();
                    let mut min_angles = Vec::new();
                    let mut final_steps = Vec::new();
                    let mut diverged = 0usize;
                    for &seed in &seeds {
                        let pc = cell_cfg
                            .problem
                            .to_core(seed)
                            .map_err(|e| RunError::Config(e.to_string()))?;
                        let problem = make_problem(&pc, seed)?;
                        let traj = run_training(&problem, init, optim, cell_cfg.record_every)?;
                        if matches!(traj.outcome, Outcome::Diverged { .. }) {
                            diverged += 1;
                        }
                        let last = traj.final_record().expect("records");
                        finals.push(last.risk_fro);
                        final_steps.push(last.step as f64);
                        min_angles
                            .push(traj.records.iter().map(|r| r.angle_a).fold(f64::INFINITY, f64::min));
                    }
                    finals.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    min_angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    final_steps.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    let cell = assignment
                        .iter()
                        .map(|(k, v)| format!("{k}={v}"))
                        .collect::<Vec<_>>()
                        .join(",");
                    Ok(SweepCell {
                        cell,
                        values: assignment.clone(),
                        seeds: seeds.len(),
                        median_final_risk_fro: median(&finals),
                        min_final_risk_fro: finals.first().copied().unwrap_or(f64::NAN),
                        max_final_risk_fro: finals.last().copied().unwrap_or(f64::NAN),
                        median_min_angle_a: median(&min_angles),
                        median_final_step: median(&final_steps),
                        diverged,
                    })
                })();
                match cell_result {
                    Ok(cell) => results.lock().unwrap()[idx] = Some(cell),
                    Err(e) => {
                        let mut slot = failure.lock().unwrap();
                        if slot.is_none() {
                            *slot = Some(e);
                        }
                        break;
                    }
                }
            });
        }
    });

    if let Some(err) = failure.into_inner().unwrap() {
        return Err(err);
    }
    let mut cells: Vec<SweepCell> =
        results.into_inner().unwrap().into_iter().map(|c| c.expect("all cells ran")).collect();
    cells.sort_by(|a, b| a.cell.cmp(&b.cell));

    let mut csv = String::new();
    csv.push_str("cell,seeds,median_final_risk_fro,min_final_risk_fro,max_final_risk_fro,median_min_angle_a,median_final_step,diverged\n");
    for c in &cells {
        csv.push_str(&format!(
            "\"{}\",{},{},{},{},{},{},{}\n",
            c.cell,
            c.seeds,
            c.median_final_risk_fro,
            c.min_final_risk_fro,
            c.max_final_risk_fro,
            c.median_min_angle_a,
            c.median_final_step,
            c.diverged
        ));
    }
    fs::write(out_dir.join(format!("{}_sweep.csv", cfg.name)), csv)?;
    let summary = serde_json::json!({
        "tool_version": env!("CARGO_PKG_VERSION"),
        "name": cfg.name,
        "config_hash": format!("{:016x}", config_hash(raw_bytes)),
        "cells": cells,
    });
    fs::write(
        out_dir.join(format!("{}_sweep_summary.json", cfg.name)),
        serde_json::to_vec_pretty(&summary).expect("serializable"),
    )?;
    Ok(cells)
}

/// Resolves the output directory: CLI flag, then the env default, then the
/// config's own section.
pub fn resolve_out_dir(flag: Option<&str>, cfg_dir: &str) -> PathBuf {
    if let Some(f) = flag {
        return PathBuf::from(f);
    }
    if let Ok(env_dir) = std::env::var("LORA_DYN_OUT") {
        if !env_dir.is_empty() {
            return PathBuf::from(env_dir).join(cfg_dir);
        }
    }
    PathBuf::from(cfg_dir)
}
