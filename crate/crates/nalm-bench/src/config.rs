//! Declarative experiment configuration.
//!
//! A config file (TOML or JSON) and/or CLI flags resolve into an
//! [`ExperimentConfig`]; flags override file values, and anything left unset
//! falls back to the benchmark defaults: the nine interpolation/extrapolation
//! range pairs, 25 seeds, 50,000 iterations, batch 128, input size 2.

use nalm::data::{BoolOp, CmpOp, Operation, RangeSpec, TaskKind};
use nalm::error::{NalmError, Result};
use nalm::layers::{Hyper, ModuleKind};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// The nine benchmark (interpolation, extrapolation) range pairs.
pub fn default_range_pairs() -> Vec<(RangeSpec, RangeSpec)> {
    let single = |lo: f64, hi: f64| RangeSpec::single(lo, hi).expect("static range");
    vec![
        (single(-20.0, -10.0), single(-40.0, -20.0)),
        (single(-2.0, -1.0), single(-6.0, -2.0)),
        (single(-1.2, -1.1), single(-6.1, -1.2)),
        (single(-0.2, -0.1), single(-2.0, -0.2)),
        (single(-2.0, 2.0), RangeSpec::new(vec![(-6.0, -2.0), (2.0, 6.0)]).expect("static range")),
        (single(0.1, 0.2), single(0.2, 2.0)),
        (single(1.0, 2.0), single(2.0, 6.0)),
        (single(1.1, 1.2), single(1.2, 6.0)),
        (single(10.0, 20.0), single(20.0, 40.0)),
    ]
}

/// Seeds given either as a count (0..n) or an explicit list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedsSpec {
    Count(u64),
    List(Vec<u64>),
}

impl SeedsSpec {
    pub fn resolve(&self) -> Result<Vec<u64>> {
        let seeds = match self {
            SeedsSpec::Count(n) => (0..*n).collect(),
            SeedsSpec::List(l) => l.clone(),
        };
        let mut dedup = seeds.clone();
        dedup.sort_unstable();
        dedup.dedup();
        if dedup.len() != seeds.len() {
            return Err(NalmError::InvalidConfig("seed list contains duplicates".into()));
        }
        if seeds.is_empty() {
            return Err(NalmError::InvalidConfig("no seeds requested".into()));
        }
        Ok(seeds)
    }
}

/// Partial per-module hyperparameter override from the config file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperOverride {
    pub eps_log: Option<f64>,
    pub omega: Option<f64>,
    pub t_disc: Option<f64>,
    pub reg_min_iter: Option<u64>,
    pub lambda_hat: Option<f64>,
    pub lambda_start: Option<u64>,
    pub lambda_end: Option<u64>,
    pub beta_start: Option<f64>,
    pub beta_end: Option<f64>,
    pub beta_growth: Option<f64>,
    pub beta_step: Option<u64>,
    pub lambda_nsr: Option<f64>,
    pub redundancy: Option<usize>,
    pub nlrl_full: Option<bool>,
    pub reinit_period: Option<u64>,
    pub reinit_min_iter: Option<u64>,
    pub loss_history_cap: Option<usize>,
}

impl HyperOverride {
    pub fn apply(&self, h: &mut Hyper) {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { h.$f = v; } )* };
        }
        set!(
            eps_log, omega, t_disc, reg_min_iter, lambda_hat, lambda_start, lambda_end, beta_start,
            beta_end, beta_growth, beta_step, lambda_nsr, redundancy, nlrl_full, reinit_period,
            reinit_min_iter, loss_history_cap
        );
    }
}

/// On-disk config document; every field optional.
#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub label: Option<String>,
    pub modules: Option<Vec<String>>,
    pub operations: Option<Vec<String>>,
    /// Interp/extrap pairs as strings, e.g. [["[1,2)", "[2,6)"]].
    pub ranges: Option<Vec<(String, String)>>,
    pub seeds: Option<SeedsSpec>,
    pub iterations: Option<u64>,
    pub batch: Option<usize>,
    pub input_size: Option<usize>,
    pub lr: Option<f64>,
    pub eval_interval: Option<u64>,
    pub epsilon: Option<f64>,
    pub workers: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub hyper: Option<BTreeMap<String, HyperOverride>>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig> {
        let text = std::fs::read_to_string(path)?;
        let is_json = path.extension().is_some_and(|e| e == "json");
        if is_json {
            Ok(serde_json::from_str(&text)?)
        } else {
            toml::from_str(&text).map_err(|e| NalmError::InvalidConfig(format!("{}: {e}", path.display())))
        }
    }
}

/// Flag-level overrides collected by the CLI.
#[derive(Clone, Debug, Default)]
pub struct Flags {
    pub modules: Vec<String>,
    pub operations: Vec<String>,
    pub interp: Option<String>,
    pub extrap: Option<String>,
    pub seeds: Option<u64>,
    pub iterations: Option<u64>,
    pub batch: Option<usize>,
    pub input_size: Option<usize>,
    pub lr: Option<f64>,
    pub workers: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

/// Fully resolved experiment description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub label: String,
    pub modules: Vec<ModuleKind>,
    pub tasks: Vec<TaskKind>,
    pub ranges: Vec<(RangeSpec, RangeSpec)>,
    pub seeds: Vec<u64>,
    pub iterations: u64,
    pub batch: usize,
    pub input_size: usize,
    /// Overrides the per-module default learning rate when set.
    pub lr: Option<f64>,
    pub eval_interval: u64,
    pub epsilon: f64,
    pub workers: usize,
    pub out_dir: PathBuf,
    pub hyper: BTreeMap<String, HyperOverride>,
}

fn parse_task(s: &str) -> Result<TaskKind> {
    if let Ok(op) = Operation::from_str(s) {
        return Ok(TaskKind::Arithmetic(op));
    }
    let t = s.trim().to_ascii_lowercase();
    let cmp = match t.as_str() {
        "lt" | "<" => Some(CmpOp::Lt),
        "gt" | ">" => Some(CmpOp::Gt),
        "le" | "<=" => Some(CmpOp::Le),
        "ge" | ">=" => Some(CmpOp::Ge),
        "eq" | "==" | "=" => Some(CmpOp::Eq),
        "ne" | "!=" => Some(CmpOp::Ne),
        _ => None,
    };
    if let Some(c) = cmp {
        return Ok(TaskKind::Comparison(c));
    }
    let boolean = match t.as_str() {
        "and" => Some(BoolOp::And),
        "or" => Some(BoolOp::Or),
        "xor" => Some(BoolOp::Xor),
        "nand" => Some(BoolOp::Nand),
        "nor" => Some(BoolOp::Nor),
        _ => None,
    };
    match boolean {
        Some(b) => Ok(TaskKind::TruthTable(b)),
        None => Err(NalmError::InvalidConfig(format!("unknown operation: {s}"))),
    }
}

/// Resolves a file (optional) plus flags into a full config.
pub fn parse_config(file: Option<&Path>, flags: &Flags) -> Result<ExperimentConfig> {
    let fc = match file {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };

    let module_names: Vec<String> = if !flags.modules.is_empty() {
        flags.modules.clone()
    } else {
        fc.modules.clone().unwrap_or_else(|| ModuleKind::ARITHMETIC.iter().map(|k| k.id().to_string()).collect())
    };
    let modules: Vec<ModuleKind> = module_names.iter().map(|m| m.parse()).collect::<Result<_>>()?;

    let op_names: Vec<String> = if !flags.operations.is_empty() {
        flags.operations.clone()
    } else {
        fc.operations.clone().unwrap_or_else(|| Operation::ALL.iter().map(|o| o.id().to_string()).collect())
    };
    let tasks: Vec<TaskKind> = op_names.iter().map(|o| parse_task(o)).collect::<Result<_>>()?;

    let ranges: Vec<(RangeSpec, RangeSpec)> = match (&flags.interp, &flags.extrap) {
        (Some(i), Some(e)) => vec![(i.parse()?, e.parse()?)],
        (None, None) => match &fc.ranges {
            Some(pairs) => pairs
                .iter()
                .map(|(i, e)| Ok((i.parse()?, e.parse()?)))
                .collect::<Result<_>>()?,
            None => default_range_pairs(),
        },
        _ => {
            return Err(NalmError::InvalidConfig("--interp and --extrap must be given together".into()));
        }
    };
    for (interp, extrap) in &ranges {
        if interp.overlaps(extrap) {
            return Err(NalmError::InvalidConfig(format!(
                "interpolation {} overlaps extrapolation {}",
                interp.label(),
                extrap.label()
            )));
        }
    }

    let seeds = match flags.seeds {
        Some(n) => SeedsSpec::Count(n).resolve()?,
        None => fc.seeds.clone().unwrap_or(SeedsSpec::Count(25)).resolve()?,
    };

    let out_dir = flags
        .out_dir
        .clone()
        .or(fc.out_dir.clone())
        .or_else(|| std::env::var_os("NALM_BENCH_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("nalm-out"));

    Ok(ExperimentConfig {
        label: fc.label.unwrap_or_else(|| "single-module-benchmark".into()),
        modules,
        tasks,
        ranges,
        seeds,
        iterations: flags.iterations.or(fc.iterations).unwrap_or(50_000),
        batch: flags.batch.or(fc.batch).unwrap_or(128),
        input_size: flags.input_size.or(fc.input_size).unwrap_or(2),
        lr: flags.lr.or(fc.lr),
        eval_interval: fc.eval_interval.unwrap_or(1_000),
        epsilon: fc.epsilon.unwrap_or(nalm::oracle::DEFAULT_EPSILON),
        workers: flags.workers.or(fc.workers).unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
        out_dir,
        hyper: fc.hyper.unwrap_or_default(),
    })
}

impl ExperimentConfig {
    /// Hyperparameters for one module on one task, with file overrides.
    pub fn hyper_for(&self, kind: ModuleKind, task: &TaskKind) -> Hyper {
        let op = match task {
            TaskKind::Arithmetic(op) => Some(*op),
            _ => None,
        };
        let mut h = Hyper::for_kind(kind, op);
        if let Some(over) = self.hyper.get(kind.id()) {
            over.apply(&mut h);
        }
        h
    }
}
