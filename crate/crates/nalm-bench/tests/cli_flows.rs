//! End-to-end flows through the compiled binary and the extraction path on
//! genuinely trained weights.

use nalm::data::{Operation, RangeSpec, TaskSpec};
use nalm::layers::{extract_expression, Hyper, Module, ModuleKind};
use nalm::train::{train_run_from_seed, TrainConfig};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nalm-bench"))
}

#[test]
fn trained_nau_extracts_the_addition_expression() {
    // A short run converges the NAU far inside the 0.05 snapping tolerance.
    let spec = TaskSpec::arithmetic(
        Operation::Add,
        2,
        RangeSpec::single(1.0, 2.0).unwrap(),
        RangeSpec::single(2.0, 6.0).unwrap(),
    );
    let cfg = TrainConfig { iterations: 8_000, lr: 1e-3, eval_interval: 1_000, curve_path: None, pre_reg_epsilon: None };
    let h = Hyper::for_kind(ModuleKind::Nau, Some(Operation::Add));
    let (record, module) = train_run_from_seed(ModuleKind::Nau, h, &spec, 0, 6.67e-9, &cfg).unwrap();
    assert!(record.success, "training run did not converge: {record:?}");

    let extraction = extract_expression(&module, 0.05);
    assert_eq!(extraction.expressions, vec!["y0 = x0 + x1"]);
    assert!(!extraction.non_discrete);

    // And the same through the weight file + extract command.
    let dir = tempfile::tempdir().unwrap();
    let weights = dir.path().join("nau.json");
    std::fs::write(&weights, module.to_json().unwrap()).unwrap();
    let out = bin().arg("extract").arg(&weights).output().unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "y0 = x0 + x1");
}

#[test]
fn extract_rejects_malformed_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    std::fs::write(&path, "{ not json").unwrap();
    let out = bin().arg("extract").arg(&path).output().unwrap();
    assert!(!out.status.success());
    let missing = dir.path().join("missing.json");
    let out = bin().arg("extract").arg(&missing).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn gradcheck_command_reports_every_module_and_exits_zero() {
    let out = bin().args(["gradcheck", "--draws", "3"]).output().unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    for kind in ModuleKind::ALL {
        assert!(stdout.contains(kind.id()), "missing row for {kind}");
    }
    assert!(!stdout.contains("FAIL"));
}

#[test]
fn single_run_emits_record_weights_and_data_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let weights = dir.path().join("w.json");
    let curve = dir.path().join("curve.csv");
    let data_dir = dir.path().join("data");
    let out = bin()
        .args([
            "single",
            "--module",
            "nau",
            "--op",
            "add",
            "--interp",
            "[1,2)",
            "--extrap",
            "[2,6)",
            "--iters",
            "500",
            "--seed",
            "1",
        ])
        .arg("--weights")
        .arg(&weights)
        .arg("--curve")
        .arg(&curve)
        .arg("--dump-data")
        .arg(&data_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("\"module\": \"nau\""));
    // The weight file loads back into a module of the right shape.
    let module = Module::from_json(&std::fs::read_to_string(&weights).unwrap()).unwrap();
    assert_eq!((module.input_size, module.output_size), (2, 1));
    // The curve has the expected header and one row per evaluation.
    let curve_text = std::fs::read_to_string(&curve).unwrap();
    assert!(curve_text.starts_with("iteration,train_loss,val_mse,extrap_mse,lambda,beta"));
    assert!(std::fs::read_to_string(data_dir.join("test.csv")).unwrap().starts_with("x1,x2,y"));
}

#[test]
fn run_rejects_unknown_module_with_nonzero_exit() {
    let out = bin().args(["run", "--module", "frobnicator", "--op", "add"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown module"));
}
