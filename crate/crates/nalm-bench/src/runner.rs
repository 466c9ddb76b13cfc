//! Sweep execution: enumerates (module, task, range, seed) runs, executes
//! them on a bounded worker pool, writes one JSON record per completed run,
//! and aggregates everything into a report bundle.
//!
//! Run identity is a hash over the module configuration, the task spec and
//! the seed. Records are keyed by that hash on disk, which makes sweeps
//! crash-resumable (existing records are reused) while config edits
//! correctly invalidate stale records. Each run derives its randomness from
//! its own seed, so adding modules or ranges to a sweep never perturbs the
//! randomness of existing runs, and aggregated results are independent of
//! worker count and completion order.

use crate::config::ExperimentConfig;
use nalm::data::{RangeSpec, TaskKind, TaskSpec};
use nalm::error::{NalmError, Result};
use nalm::layers::{Hyper, ModuleKind};
use nalm::metrics::MetricKind;
use nalm::oracle::{simulate_threshold, DEFAULT_SAMPLES, DEFAULT_SIM_SEED};
use nalm::report::{aggregate, emit_tables, render_svg, ReportBundle};
use nalm::train::{default_lr, train_run_from_seed, RunRecord, TrainConfig};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

/// One unit of work in the sweep.
#[derive(Clone, Debug)]
pub struct RunPlan {
    pub kind: ModuleKind,
    pub hyper: Hyper,
    pub spec: TaskSpec,
    pub seed: u64,
    pub lr: f64,
    pub train: TrainConfig,
    pub threshold: f64,
    pub hash: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SweepStats {
    pub executed: usize,
    pub reused: usize,
}

/// Identity of one run: everything that affects its outcome.
#[derive(Serialize)]
struct RunIdentity<'a> {
    kind: ModuleKind,
    hyper: &'a Hyper,
    spec: &'a TaskSpec,
    seed: u64,
    lr: f64,
    iterations: u64,
    eval_interval: u64,
    epsilon: f64,
}

pub fn run_hash(kind: ModuleKind, hyper: &Hyper, spec: &TaskSpec, seed: u64, lr: f64, train: &TrainConfig, epsilon: f64) -> String {
    let identity = RunIdentity {
        kind,
        hyper,
        spec,
        seed,
        lr,
        iterations: train.iterations,
        eval_interval: train.eval_interval,
        epsilon,
    };
    let json = serde_json::to_string(&identity).expect("identity serializes");
    let digest = Sha256::digest(json.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Hash of the whole experiment configuration, stamped into the bundle.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    let digest = Sha256::digest(json.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Range pairs that make sense for a task family. Arithmetic tasks sweep the
/// configured ranges; comparisons default to integer pairs trained on
/// [0, 100] and tested on [100, 1000] unless ranges were set explicitly;
/// truth tables enumerate all rows and carry a placeholder range.
fn ranges_for_task(task: &TaskKind, cfg: &ExperimentConfig, ranges_explicit: bool) -> Vec<(RangeSpec, RangeSpec)> {
    match task {
        TaskKind::Arithmetic(_) => cfg.ranges.clone(),
        TaskKind::Comparison(_) => {
            if ranges_explicit {
                cfg.ranges.clone()
            } else {
                vec![(
                    RangeSpec::single(0.0, 101.0).expect("static range"),
                    RangeSpec::single(100.0, 1001.0).expect("static range"),
                )]
            }
        }
        TaskKind::TruthTable(_) => vec![(
            RangeSpec::single(0.0, 1.0).expect("static range"),
            RangeSpec::single(1.0, 2.0).expect("static range"),
        )],
    }
}

fn family_matches(kind: ModuleKind, task: &TaskKind) -> bool {
    kind.is_logic() == matches!(task, TaskKind::TruthTable(_) | TaskKind::Comparison(_))
}

/// Expands the config into the full run list, resolving thresholds once per
/// (operation, extrapolation range, input size).
pub fn plan_runs(cfg: &ExperimentConfig, ranges_explicit: bool) -> Result<Vec<RunPlan>> {
    let mut thresholds: BTreeMap<(String, String, usize), f64> = BTreeMap::new();
    let mut plans = Vec::new();
    for task in &cfg.tasks {
        for (interp, extrap) in ranges_for_task(task, cfg, ranges_explicit) {
            for &kind in &cfg.modules {
                if !family_matches(kind, task) {
                    continue;
                }
                let mut spec = TaskSpec {
                    task: task.clone(),
                    input_size: cfg.input_size,
                    interp: interp.clone(),
                    extrap: extrap.clone(),
                    batch: cfg.batch,
                    val_size: 10_000,
                    test_size: 10_000,
                };
                if matches!(task, TaskKind::TruthTable(_) | TaskKind::Comparison(_)) {
                    spec.input_size = spec.input_size.max(2);
                }
                let threshold = match task {
                    TaskKind::Arithmetic(op) => {
                        let key = (op.id().to_string(), extrap.label(), spec.input_size);
                        match thresholds.get(&key) {
                            Some(&t) => t,
                            None => {
                                let t = simulate_threshold(*op, &extrap, spec.input_size, cfg.epsilon, DEFAULT_SAMPLES, DEFAULT_SIM_SEED)?
                                    .mse;
                                thresholds.insert(key, t);
                                t
                            }
                        }
                    }
                    _ => 0.0,
                };
                let hyper = cfg.hyper_for(kind, task);
                let lr = cfg.lr.unwrap_or_else(|| default_lr(kind, task));
                let train = TrainConfig {
                    iterations: cfg.iterations,
                    lr,
                    eval_interval: cfg.eval_interval,
                    curve_path: None,
                    pre_reg_epsilon: None,
                };
                for &seed in &cfg.seeds {
                    let hash = run_hash(kind, &hyper, &spec, seed, lr, &train, cfg.epsilon);
                    plans.push(RunPlan {
                        kind,
                        hyper: hyper.clone(),
                        spec: spec.clone(),
                        seed,
                        lr,
                        train: train.clone(),
                        threshold,
                        hash,
                    });
                }
            }
        }
    }
    Ok(plans)
}

fn record_path(records_dir: &Path, hash: &str) -> PathBuf {
    records_dir.join(format!("{hash}.json"))
}

fn load_record(path: &Path) -> Option<RunRecord> {
    let text = std::fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

/// Executes one planned run and persists its record.
pub fn execute_plan(plan: &RunPlan, records_dir: &Path) -> Result<RunRecord> {
    let (record, _module) = train_run_from_seed(plan.kind, plan.hyper.clone(), &plan.spec, plan.seed, plan.threshold, &plan.train)?;
    let path = record_path(records_dir, &plan.hash);
    std::fs::write(&path, serde_json::to_string_pretty(&record)?)?;
    Ok(record)
}

/// Runs the whole sweep and aggregates into a bundle. Completed runs found in
/// the records directory are reused instead of re-executed.
pub fn run_matrix(cfg: &ExperimentConfig, ranges_explicit: bool, progress: bool) -> Result<(ReportBundle, SweepStats)> {
    let plans = plan_runs(cfg, ranges_explicit)?;
    let records_dir = cfg.out_dir.join("records");
    std::fs::create_dir_all(&records_dir)?;

    let done = AtomicUsize::new(0);
    let total = plans.len();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .map_err(|e| NalmError::InvalidConfig(format!("worker pool: {e}")))?;

    let results: Vec<Result<(RunRecord, bool)>> = pool.install(|| {
        plans
            .par_iter()
            .map(|plan| {
                let path = record_path(&records_dir, &plan.hash);
                let (record, reused) = match load_record(&path) {
                    Some(r) => (r, true),
                    None => (execute_plan(plan, &records_dir)?, false),
                };
                let n = done.fetch_add(1, Ordering::Relaxed) + 1;
                if progress {
                    eprintln!(
                        "[{n}/{total}] {} {} {} seed {} -> success={} ({})",
                        plan.kind.id(),
                        plan.spec.task.id(),
                        plan.spec.interp.label(),
                        plan.seed,
                        record.success,
                        if reused { "cached" } else { "trained" },
                    );
                }
                Ok((record, reused))
            })
            .collect()
    });

    let mut records = Vec::with_capacity(total);
    let mut stats = SweepStats::default();
    for r in results {
        let (record, reused) = r?;
        if reused {
            stats.reused += 1;
        } else {
            stats.executed += 1;
        }
        records.push(record);
    }
    // Canonical order: aggregation output must not depend on scheduling.
    records.sort_by(|a, b| {
        (a.task.as_str(), a.module.id(), a.interp_label.as_str(), a.seed)
            .cmp(&(b.task.as_str(), b.module.id(), b.interp_label.as_str(), b.seed))
    });

    let generated_at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
    let bundle = aggregate(&records, &cfg.label, &config_hash(cfg), &generated_at)?;
    Ok((bundle, stats))
}

/// Writes the tables and the three metric charts under `out_dir`.
pub fn emit_reports(bundle: &ReportBundle, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = emit_tables(bundle, out_dir)?;
    for (metric, name) in [
        (MetricKind::SuccessRate, "success_rate.svg"),
        (MetricKind::SolvedAt, "solved_at.svg"),
        (MetricKind::Sparsity, "sparsity_error.svg"),
    ] {
        let path = out_dir.join(name);
        render_svg(bundle, metric, &path)?;
        files.push(path);
    }
    Ok(files)
}

/// Loads every record JSON under a directory (for `report` re-rendering).
pub fn load_records(dir: &Path) -> Result<Vec<RunRecord>> {
    let mut records = Vec::new();
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    for p in paths {
        let text = std::fs::read_to_string(&p)?;
        match serde_json::from_str::<RunRecord>(&text) {
            Ok(r) => records.push(r),
            Err(e) => return Err(NalmError::InvalidInput(format!("{}: {e}", p.display()))),
        }
    }
    Ok(records)
}
