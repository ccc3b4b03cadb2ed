//! Runs a parsed configuration and writes its artefacts.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use seedbank_core::analytics::{count_table, speed_bound_for, write_count_table_csv};
use seedbank_core::dual::{calibrate_local_time, simulate_dual, write_particles_csv, write_trace_csv, DualOptions};
use seedbank_core::duality::{max_cdf_pipeline, moment_duality_check, MomentDualitySetup};
use seedbank_core::model::{InitialCondition, ModelParams};
use seedbank_core::rng;
use seedbank_core::spde::{invasion_speed, run_spde, write_front_csv, write_snapshots_csv, SpdeOptions};
use serde_json::{json, Map, Value};

use crate::config::{DualSettings, ExperimentConfig, Task};

/// What a run produced: headline numbers and, for experiments that embed
/// an acceptance check, the verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub verdict: Option<bool>,
    pub metrics: Map<String, Value>,
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).with_context(|| format!("cannot create {}", path.display()))?))
}

fn write_with(dir: &Path, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let mut w = create(dir, name)?;
    f(&mut w).and_then(|_| w.flush()).with_context(|| format!("cannot write {name}"))
}

fn dual_options(d: &DualSettings) -> DualOptions {
    DualOptions { eps: d.eps, cap: d.cap, prune_gap: d.prune_gap, ..DualOptions::with_dt(d.dt) }
}

fn metrics(pairs: Vec<(&str, Value)>) -> Map<String, Value> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// Runs the experiment and writes `config.resolved`, its data files and
/// `summary.json` into the configured output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Outcome> {
    let start = Instant::now();
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    std::fs::write(dir.join("config.resolved"), cfg.to_toml()).context("cannot write config.resolved")?;

    let outcome = dispatch(cfg, dir)?;

    let summary = json!({
        "experiment": cfg.experiment.as_str(),
        "seed": cfg.seed,
        "wall_time": start.elapsed().as_secs_f64(),
        "headline_metrics": Value::Object(outcome.metrics.clone()),
        "pass": outcome.verdict,
    });
    write_with(dir, "summary.json", |w| {
        serde_json::to_writer_pretty(&mut *w, &summary)?;
        writeln!(w)
    })?;
    Ok(outcome)
}

fn dispatch(cfg: &ExperimentConfig, dir: &Path) -> Result<Outcome> {
    let p: &ModelParams = &cfg.params;
    let spde_key = rng::derive(cfg.seed, rng::tag::SPDE);
    match &cfg.task {
        Task::Spde { horizon, record_every, theta, initial, scheme } => {
            let lattice = cfg.lattice.as_ref().expect("spde has a lattice");
            let opts = SpdeOptions { theta: *theta, scheme: *scheme, ..SpdeOptions::new(*horizon, *record_every) };
            let run = run_spde(initial, p, lattice, &opts, spde_key)?;
            write_with(dir, "snapshots.csv", |w| write_snapshots_csv(w, lattice, &run.snapshots))?;
            write_with(dir, "front.csv", |w| write_front_csv(w, &run.front))?;
            let last = run.last();
            let min_u = last.u.iter().copied().fold(f64::INFINITY, f64::min);
            let max_u = last.u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Ok(Outcome {
                verdict: None,
                metrics: metrics(vec![
                    ("final_front", json!(run.front.samples.last().map(|s| s.1))),
                    ("clamp_count", json!(run.clamp_count)),
                    ("snapshots", json!(run.snapshots.len())),
                    ("min_u", json!(min_u)),
                    ("max_u", json!(max_u)),
                ]),
            })
        }
        Task::Speed { horizon, window, record_every, theta, scheme } => {
            let lattice = cfg.lattice.as_ref().expect("speed has a lattice");
            let opts = SpdeOptions { theta: *theta, scheme: *scheme, ..SpdeOptions::new(*horizon, *record_every) };
            let run = run_spde(&InitialCondition::HeavisideRight, p, lattice, &opts, spde_key)?;
            write_with(dir, "front.csv", |w| write_front_csv(w, &run.front))?;
            let est = invasion_speed(&run.front, *window)?;
            let lambda_star = speed_bound_for(p).ok().map(|b| b.lambda_star);
            Ok(Outcome {
                verdict: None,
                metrics: metrics(vec![
                    ("speed", json!(est.speed)),
                    ("std_error", json!(est.std_error)),
                    ("samples", json!(est.samples)),
                    ("lambda_star", json!(lambda_star)),
                ]),
            })
        }
        Task::Dual { horizon, record_every, start } => {
            let d = cfg.dual.as_ref().expect("dual has settings");
            let opts = DualOptions { record_every: Some(*record_every), ..dual_options(d) };
            let run = simulate_dual(start, p, *horizon, &opts, rng::derive(cfg.seed, rng::tag::DUAL))?;
            write_with(dir, "trace.csv", |w| write_trace_csv(w, &run.trace))?;
            write_with(dir, "particles.csv", |w| write_particles_csv(w, &run.particles))?;
            Ok(Outcome {
                verdict: None,
                metrics: metrics(vec![
                    ("n_active", json!(run.n_active())),
                    ("n_dormant", json!(run.n_dormant())),
                    ("rightmost", json!(run.rightmost().ok())),
                    ("A", json!(run.occupation)),
                    ("weight", json!(run.weight)),
                    ("pruned", json!(run.pruned)),
                ]),
            })
        }
        Task::Duality { horizon, n_spde, n_dual, allowance, start, initial } => {
            let setup = MomentDualitySetup {
                ic: initial.clone(),
                params: *p,
                lattice: cfg.lattice.expect("duality has a lattice"),
                dual_initial: start.clone(),
                t: *horizon,
                n_spde: *n_spde,
                n_dual: *n_dual,
                dual: dual_options(cfg.dual.as_ref().expect("duality has dual settings")),
                allowance: *allowance,
            };
            let report = moment_duality_check(&setup, cfg.seed)?;
            write_with(dir, "report.json", |w| {
                serde_json::to_writer_pretty(&mut *w, &report)?;
                writeln!(w)
            })?;
            Ok(Outcome {
                verdict: Some(report.pass),
                metrics: metrics(vec![
                    ("lhs", json!(report.lhs)),
                    ("rhs", json!(report.rhs)),
                    ("discrepancy_sigmas", json!(report.discrepancy_sigmas)),
                    ("tolerance", json!(report.tolerance)),
                ]),
            })
        }
        Task::MaxCdf { horizon, probes, n_dual, allowance } => {
            let lattice = cfg.lattice.as_ref().expect("max-cdf has a lattice");
            let d = dual_options(cfg.dual.as_ref().expect("max-cdf has dual settings"));
            let reports = max_cdf_pipeline(p, lattice, *horizon, probes, *n_dual, cfg.seed, &d, *allowance)?;
            write_with(dir, "cdf.csv", |w| {
                writeln!(w, "x,u,empirical,se,pass")?;
                for (x, r) in probes.iter().zip(&reports) {
                    writeln!(w, "{x},{},{},{},{}", r.lhs, r.rhs, r.se_rhs, r.pass)?;
                }
                Ok(())
            })?;
            write_with(dir, "reports.json", |w| {
                serde_json::to_writer_pretty(&mut *w, &reports)?;
                writeln!(w)
            })?;
            let worst = reports.iter().map(|r| r.discrepancy()).fold(0.0, f64::max);
            Ok(Outcome {
                verdict: Some(reports.iter().all(|r| r.pass)),
                metrics: metrics(vec![("max_abs_diff", json!(worst)), ("probes", json!(probes.len()))]),
            })
        }
        Task::Bounds { lambda, times } => {
            let bound = speed_bound_for(p)?;
            let rows = count_table(p, times, *lambda)?;
            write_with(dir, "bounds.csv", |w| write_count_table_csv(w, &rows))?;
            Ok(Outcome {
                verdict: None,
                metrics: metrics(vec![("lambda_star", json!(bound.lambda_star)), ("lambda", json!(lambda))]),
            })
        }
        Task::Counts { times, lambda } => {
            let rows = count_table(p, times, lambda.unwrap_or(0.0))?;
            write_with(dir, "counts.csv", |w| write_count_table_csv(w, &rows))?;
            let last = rows.last();
            Ok(Outcome {
                verdict: None,
                metrics: metrics(vec![
                    ("t", json!(last.map(|r| r.t))),
                    ("x", json!(last.map(|r| r.x))),
                    ("y", json!(last.map(|r| r.y))),
                ]),
            })
        }
        Task::Localtime { horizon, dt, eps, replicates } => {
            let est = calibrate_local_time(*horizon, *eps, *dt, *replicates, cfg.seed)?;
            let target = (horizon / std::f64::consts::PI).sqrt();
            Ok(Outcome {
                verdict: None,
                metrics: metrics(vec![
                    ("mean_local_time", json!(est.mean)),
                    ("std_error", json!(est.std_error)),
                    ("target", json!(target)),
                    ("relative_error", json!((est.mean - target).abs() / target)),
                ]),
            })
        }
    }
}
