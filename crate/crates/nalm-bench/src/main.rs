//! Benchmark CLI: sweeps, single verbose runs, gradient checks, expression
//! extraction, and report re-rendering.

use clap::{Args, Parser, Subcommand};
use nalm::error::Result;
use nalm::layers::{extract_expression, grad_check_kind, Module, ModuleKind};
use nalm::train::train_run_from_seed;
use nalm_bench::config::{parse_config, Flags};
use nalm_bench::runner::{emit_reports, load_records, plan_runs, run_hash, run_matrix};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "nalm-bench", version, about = "Single-module arithmetic/logic benchmark for NALMs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct SweepArgs {
    /// Config file (TOML or JSON); flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Module kinds (repeatable), e.g. nau, nmu, nalu, inalu, real_npu.
    #[arg(long = "module")]
    modules: Vec<String>,
    /// Operations (repeatable): add/sub/mul/div, comparisons (lt, eq, ...),
    /// boolean ops (and, xor, ...).
    #[arg(long = "op")]
    operations: Vec<String>,
    /// Interpolation range, e.g. "[1,2)". Requires --extrap.
    #[arg(long)]
    interp: Option<String>,
    /// Extrapolation range, e.g. "[2,6)" or "[[-6,-2),[2,6)]".
    #[arg(long)]
    extrap: Option<String>,
    /// Number of seeds (0..n).
    #[arg(long)]
    seeds: Option<u64>,
    /// Training iterations per run.
    #[arg(long)]
    iters: Option<u64>,
    /// Batch size.
    #[arg(long)]
    batch: Option<usize>,
    /// Input width I (operands are the first two inputs).
    #[arg(long = "input-size")]
    input_size: Option<usize>,
    /// Learning-rate override for every run.
    #[arg(long)]
    lr: Option<f64>,
    /// Worker pool size.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory (also honors NALM_BENCH_OUT).
    #[arg(long, env = "NALM_BENCH_OUT")]
    out: Option<PathBuf>,
}

impl SweepArgs {
    fn flags(&self) -> Flags {
        Flags {
            modules: self.modules.clone(),
            operations: self.operations.clone(),
            interp: self.interp.clone(),
            extrap: self.extrap.clone(),
            seeds: self.seeds,
            iterations: self.iters,
            batch: self.batch,
            input_size: self.input_size,
            lr: self.lr,
            workers: self.workers,
            out_dir: self.out.clone(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep over (module, operation, range, seed) and render reports.
    Run(SweepArgs),
    /// Run one (module, operation, range, seed) verbosely.
    Single {
        #[command(flatten)]
        sweep: SweepArgs,
        /// Seed for the single run.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the per-evaluation training curve to this CSV.
        #[arg(long)]
        curve: Option<PathBuf>,
        /// Write the best-checkpoint weights to this JSON file.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Dump the fixed validation/test sets as CSV into this directory.
        #[arg(long = "dump-data")]
        dump_data: Option<PathBuf>,
        /// Diagnostic: also track when the run first beats a looser
        /// epsilon-perfect threshold (epsilon < 0.5) before the regularizer
        /// ramp starts.
        #[arg(long = "pre-reg-eps")]
        pre_reg_eps: Option<f64>,
    },
    /// Check analytic gradients against finite differences for every module.
    Gradcheck {
        /// Random draws per module kind.
        #[arg(long, default_value_t = 20)]
        draws: usize,
        /// Central-difference step.
        #[arg(long, default_value_t = 1e-6)]
        step: f64,
    },
    /// Print the symbolic expression encoded by a saved weight file.
    Extract {
        /// Weight JSON produced by `single --weights`.
        weights: PathBuf,
        /// Snapping tolerance around the discrete weight values.
        #[arg(long, default_value_t = 0.05)]
        tolerance: f64,
    },
    /// Re-render tables and charts from an existing records directory.
    Report {
        /// Directory containing per-run record JSON files.
        #[arg(long)]
        records: PathBuf,
        /// Output directory for tables and charts.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Label stamped into the report bundle.
        #[arg(long, default_value = "re-render")]
        label: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Single { sweep, seed, curve, weights, dump_data, pre_reg_eps } => {
            cmd_single(sweep, seed, curve, weights, dump_data, pre_reg_eps)
        }
        Command::Gradcheck { draws, step } => cmd_gradcheck(draws, step),
        Command::Extract { weights, tolerance } => cmd_extract(&weights, tolerance),
        Command::Report { records, out, label } => cmd_report(&records, out, &label),
    }
}

fn cmd_run(args: SweepArgs) -> Result<ExitCode> {
    let ranges_explicit = args.interp.is_some() || args.config.is_some();
    let cfg = parse_config(args.config.as_deref(), &args.flags())?;
    let (bundle, stats) = run_matrix(&cfg, ranges_explicit, true)?;
    let files = emit_reports(&bundle, &cfg.out_dir)?;
    println!("sweep complete: {} trained, {} reused from records", stats.executed, stats.reused);
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_single(
    args: SweepArgs,
    seed: u64,
    curve: Option<PathBuf>,
    weights: Option<PathBuf>,
    dump_data: Option<PathBuf>,
    pre_reg_eps: Option<f64>,
) -> Result<ExitCode> {
    let mut flags = args.flags();
    if flags.modules.len() != 1 || flags.operations.len() != 1 {
        return Err(nalm::NalmError::InvalidConfig("single needs exactly one --module and one --op".into()));
    }
    if flags.seeds.is_none() {
        flags.seeds = Some(1);
    }
    let ranges_explicit = args.interp.is_some() || args.config.is_some();
    let cfg = parse_config(args.config.as_deref(), &flags)?;
    let mut plans = plan_runs(&cfg, ranges_explicit)?;
    if plans.is_empty() {
        return Err(nalm::NalmError::InvalidConfig(
            "no runnable combination (module/operation families must match)".into(),
        ));
    }
    plans.truncate(1);
    let mut plan = plans.remove(0);
    plan.seed = seed;
    plan.train.curve_path = curve;
    plan.train.pre_reg_epsilon = pre_reg_eps;
    plan.hash = run_hash(plan.kind, &plan.hyper, &plan.spec, plan.seed, plan.lr, &plan.train, cfg.epsilon);

    if let Some(dir) = dump_data {
        std::fs::create_dir_all(&dir)?;
        let data = nalm::data::build_task(&plan.spec, plan.seed)?;
        data.val.write_csv(&dir.join("validation.csv"))?;
        data.test.write_csv(&dir.join("test.csv"))?;
        println!("wrote {}", dir.join("validation.csv").display());
        println!("wrote {}", dir.join("test.csv").display());
    }

    let (record, module) = train_run_from_seed(plan.kind, plan.hyper.clone(), &plan.spec, plan.seed, plan.threshold, &plan.train)?;
    println!("{}", serde_json::to_string_pretty(&record).expect("record serializes"));
    let extraction = extract_expression(&module, 0.05);
    print!("{extraction}");
    if let Some(path) = weights {
        std::fs::write(&path, module.to_json()?)?;
        println!("wrote {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(draws: usize, step: f64) -> Result<ExitCode> {
    let tolerance = 1e-4;
    let mut failed = false;
    println!("{:<10} {:>14}  status", "module", "max rel err");
    for kind in ModuleKind::ALL {
        let err = grad_check_kind(kind, draws, step, 0x9a0d + kind as u64)?;
        let ok = err < tolerance;
        failed |= !ok;
        println!("{:<10} {err:>14.3e}  {}", kind.id(), if ok { "ok" } else { "FAIL" });
    }
    Ok(if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}

fn cmd_extract(weights: &Path, tolerance: f64) -> Result<ExitCode> {
    let text = std::fs::read_to_string(weights)?;
    let module = Module::from_json(&text)?;
    print!("{}", extract_expression(&module, tolerance));
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(records: &Path, out: Option<PathBuf>, label: &str) -> Result<ExitCode> {
    let recs = load_records(records)?;
    if recs.is_empty() {
        return Err(nalm::NalmError::InvalidInput(format!("no records under {}", records.display())));
    }
    let generated_at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
    let bundle = nalm::report::aggregate(&recs, label, "from-records", &generated_at)?;
    let out_dir = out.unwrap_or_else(|| records.parent().map(|p| p.to_path_buf()).unwrap_or_else(|| PathBuf::from(".")));
    let files = emit_reports(&bundle, &out_dir)?;
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(ExitCode::SUCCESS)
}
