//! `lora-dyn run|preset|verify|sweep`: experiment presets, single runs,
//! parameter sweeps, and theorem verification.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 scientific failure
//! (a diverged run or a bound that fails to hold).

use lora_dyn::config::ExperimentConfig;
use lora_dyn::presets;
use lora_dyn::runner::{resolve_out_dir, run_config, sweep_config, RunError};
use lora_dyn::verify::verify;
use lora_dyn_core::theory::TheoremId;
use std::path::PathBuf;
use std::process::ExitCode;

const USAGE: &str = "\
lora-dyn - low-rank adapter dynamics laboratory

USAGE:
  lora-dyn run    --config PATH [--out DIR] [--seed-list CSV]
  lora-dyn sweep  --config PATH [--out DIR] [--jobs N] [--seed-list CSV]
  lora-dyn verify THEOREM [--config PATH] [--out DIR]
  lora-dyn preset [NAME] [--out DIR]

SUBCOMMANDS:
  run      Execute every (method, seed) run of a config; one CSV per run
           plus a summary JSON.
  sweep    Cross-product of the config's sweep axes and seeds; cells run
           concurrently up to --jobs; emits an aggregated CSV sorted by
           cell key.
  verify   Run the minimal experiment for a theorem and emit a bound
           report (exit 0 iff the bound holds, or the preset marks the
           violation as expected).
  preset   Write a shipped preset config to disk; with no NAME, list all
           presets.

THEOREMS:
  thm_3_1 thm_3_2 thm_3_6 thm_c9 thm_c13 thm_4_2 lemma_c4 lemma_d6

OPTIONS:
  --config PATH     Experiment config JSON.
  --out DIR         Output directory (default: the config's outputs.dir,
                    optionally rooted at $LORA_DYN_OUT).
  --jobs N          Concurrent sweep cells (default 1).
  --seed-list CSV   Override the config's seed list, e.g. 0,1,2.
";

struct Args {
    command: String,
    positional: Vec<String>,
    config: Option<String>,
    out: Option<String>,
    jobs: usize,
    seed_list: Option<Vec<u64>>,
}

fn parse_args(mut argv: std::env::Args) -> Result<Args, String> {
    let _bin = argv.next();
    let command = argv.next().ok_or_else(|| "missing subcommand".to_string())?;
    let mut args = Args {
        command,
        positional: Vec::new(),
        config: None,
        out: None,
        jobs: 1,
        seed_list: None,
    };
    let rest: Vec<String> = argv.collect();
    let mut i = 0;
    while i < rest.len() {
        match rest[i].as_str() {
            "--config" => {
                args.config = Some(rest.get(i + 1).ok_or("--config needs a path")?.clone());
                i += 2;
            }
            "--out" => {
                args.out = Some(rest.get(i + 1).ok_or("--out needs a directory")?.clone());
                i += 2;
            }
            "--jobs" => {
                args.jobs = rest
                    .get(i + 1)
                    .ok_or("--jobs needs a count")?
                    .parse()
                    .map_err(|_| "--jobs needs an integer".to_string())?;
                i += 2;
            }
            "--seed-list" => {
                let csv = rest.get(i + 1).ok_or("--seed-list needs values")?;
                let seeds: Result<Vec<u64>, _> = csv.split(',').map(|s| s.trim().parse()).collect();
                args.seed_list = Some(seeds.map_err(|_| "--seed-list needs integers".to_string())?);
                i += 2;
            }
            flag if flag.starts_with("--") => return Err(format!("unknown flag {flag}")),
            _ => {
                args.positional.push(rest[i].clone());
                i += 1;
            }
        }
    }
    Ok(args)
}

fn load_config(path: &str) -> Result<(ExperimentConfig, Vec<u8>), String> {
    let bytes = std::fs::read(path).map_err(|e| format!("cannot read {path}: {e}"))?;
    let cfg = ExperimentConfig::from_json(&bytes).map_err(|e| e.to_string())?;
    Ok((cfg, bytes))
}

fn main() -> ExitCode {
    let args = match parse_args(std::env::args()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}\n\n{USAGE}");
            return ExitCode::from(1);
        }
    };

    match args.command.as_str() {
        "run" => {
            let Some(path) = args.config.as_deref() else {
                eprintln!("error: run needs --config\n\n{USAGE}");
                return ExitCode::from(1);
            };
            let (cfg, bytes) = match load_config(path) {
                Ok(v) => v,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            let out = resolve_out_dir(args.out.as_deref(), &cfg.outputs.dir);
            match run_config(&cfg, &bytes, &out, args.seed_list.as_deref()) {
                Ok(summary) => {
                    let mut diverged = false;
                    for r in &summary.runs {
                        println!(
                            "{}{} seed {}: {} (final risk {:.6e}, {} -> {})",
                            cfg.name,
                            if r.method.is_empty() { String::new() } else { format!("/{}", r.method) },
                            r.seed,
                            r.outcome,
                            r.final_risk_fro,
                            r.final_step,
                            r.csv
                        );
                        diverged |= r.outcome.starts_with("diverged");
                    }
                    if diverged {
                        eprintln!("at least one run diverged");
                        ExitCode::from(2)
                    } else {
                        ExitCode::SUCCESS
                    }
                }
                Err(RunError::Science(m)) => {
                    eprintln!("error: {m}");
                    ExitCode::from(2)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            }
        }
        "sweep" => {
            let Some(path) = args.config.as_deref() else {
                eprintln!("error: sweep needs --config\n\n{USAGE}");
                return ExitCode::from(1);
            };
            let (cfg, bytes) = match load_config(path) {
                Ok(v) => v,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            let out = resolve_out_dir(args.out.as_deref(), &cfg.outputs.dir);
            match sweep_config(&cfg, &bytes, &out, args.jobs, args.seed_list.as_deref()) {
                Ok(cells) => {
                    for c in &cells {
                        println!(
                            "{}: median final risk {:.6e}, median min angle {:.4}{}",
                            c.cell,
                            c.median_final_risk_fro,
                            c.median_min_angle_a,
                            if c.diverged > 0 { format!(" ({} diverged)", c.diverged) } else { String::new() }
                        );
                    }
                    if cells.iter().any(|c| c.diverged > 0) {
                        ExitCode::from(2)
                    } else {
                        ExitCode::SUCCESS
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            }
        }
        "verify" => {
            let Some(theorem_name) = args.positional.first() else {
                eprintln!("error: verify needs a theorem id\n\n{USAGE}");
                return ExitCode::from(1);
            };
            let Some(theorem) = TheoremId::parse(theorem_name) else {
                eprintln!("error: unknown theorem {theorem_name}; known: {}", TheoremId::all().join(" "));
                return ExitCode::from(1);
            };
            let (cfg, _bytes) = match args.config.as_deref() {
                Some(path) => match load_config(path) {
                    Ok(v) => v,
                    Err(e) => {
                        eprintln!("error: {e}");
                        return ExitCode::from(1);
                    }
                },
                None => {
                    let body = presets::verify_preset_for(theorem_name)
                        .expect("every theorem has a default preset");
                    (ExperimentConfig::from_json(body.as_bytes()).expect("shipped preset is valid"), body.as_bytes().to_vec())
                }
            };
            let out = resolve_out_dir(args.out.as_deref(), &cfg.outputs.dir);
            match verify(theorem, &cfg, &out) {
                Ok(outcome) => {
                    println!("{}", serde_json::to_string_pretty(&outcome.report).expect("serializable"));
                    println!(
                        "{}: {} ({}/{} seeds held, margin {:.3e})",
                        outcome.report.theorem_id,
                        if outcome.report.holds { "HOLDS" } else { "VIOLATED" },
                        outcome.seeds_held,
                        outcome.seeds_checked,
                        outcome.report.margin
                    );
                    if outcome.acceptable {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(2)
                    }
                }
                Err(RunError::Config(m)) => {
                    eprintln!("error: {m}");
                    ExitCode::from(1)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            }
        }
        "preset" => {
            match args.positional.first() {
                None => {
                    for name in presets::names() {
                        println!("{name}");
                    }
                    ExitCode::SUCCESS
                }
                Some(name) => match presets::lookup(name) {
                    Some(body) => {
                        let dir = PathBuf::from(args.out.as_deref().unwrap_or("."));
                        if let Err(e) = std::fs::create_dir_all(&dir) {
                            eprintln!("error: {e}");
                            return ExitCode::from(1);
                        }
                        let path = dir.join(format!("{name}.json"));
                        if let Err(e) = std::fs::write(&path, body) {
                            eprintln!("error: {e}");
                            return ExitCode::from(1);
                        }
                        println!("{}", path.display());
                        ExitCode::SUCCESS
                    }
                    None => {
                        eprintln!("error: unknown preset {name}; available:");
                        for n in presets::names() {
                            eprintln!("  {n}");
                        }
                        ExitCode::from(1)
                    }
                },
            }
        }
        other => {
            eprintln!("error: unknown subcommand {other}\n\n{USAGE}");
            ExitCode::from(1)
        }
    }
}
