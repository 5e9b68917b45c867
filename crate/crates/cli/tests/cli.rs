use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &str = r#"{"n": 60, "d": 20, "h": 40, "test_size": 200,
  "optimizer": {"kind": "gd", "learning_rate": 1.0}, "epochs": 20, "record_every": 10, "trials": 2,
  "sweep": {"learning_rates": [0.5, 2.0], "epoch_cap": 20},
  "scaling": {"n_list": [50, 80], "steps": 3}}"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_spectral-lab"));
    c.env("SPECTRAL_LAB_THREADS", "1");
    c
}

fn run(dir: &Path, args: &[&str]) -> (i32, Value, Output) {
    let out = bin().current_dir(dir).args(args).output().unwrap();
    let stdout = String::from_utf8(out.stdout.clone()).unwrap();
    let last = stdout.lines().last().expect("summary line");
    (out.status.code().unwrap(), serde_json::from_str(last).unwrap(), out)
}

fn setup() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("tiny.json"), TINY).unwrap();
    tmp
}

fn run_dir(summary: &Value, base: &Path) -> PathBuf {
    base.join(summary["run_dir"].as_str().unwrap())
}

fn read_json(p: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn run_case_writes_report_and_is_reproducible() {
    let tmp = setup();
    let (code, s, _) = run(tmp.path(), &["run-case", "--config", "tiny.json", "--quiet"]);
    assert_eq!(code, 0);
    assert_eq!(s["status"], "ok");
    let dir = run_dir(&s, tmp.path());
    let first: Vec<(String, Vec<u8>)> = {
        let mut files: Vec<_> = fs::read_dir(&dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.file_name().unwrap() != "index.json")
            .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
            .collect();
        files.sort();
        files
    };
    assert!(first.iter().any(|(n, _)| n == "report.json"));
    assert!(first.iter().any(|(n, _)| n == "eig-seed1-ntk-trained.csv"));
    let (code, s2, _) = run(tmp.path(), &["run-case", "--config", "tiny.json", "--quiet"]);
    assert_eq!(code, 0);
    assert_eq!(s2["run_dir"], s["run_dir"]);
    for (name, bytes) in &first {
        assert_eq!(&fs::read(dir.join(name)).unwrap(), bytes, "{name} differs");
    }
    let index = read_json(dir.join("index.json"));
    assert_eq!(index["artifacts"].as_array().unwrap().len(), first.len());
}

#[test]
fn missing_config_is_a_config_error_without_outputs() {
    let tmp = setup();
    let (code, s, out) = run(tmp.path(), &["run-case", "--config", "nope.json"]);
    assert_eq!(code, 1);
    assert_eq!(s["exit_code"], 1);
    assert!(!out.stderr.is_empty());
    assert!(!tmp.path().join("runs").exists());
}

#[test]
fn unknown_override_is_rejected_before_running() {
    let tmp = setup();
    let (code, _, _) = run(tmp.path(), &["sweep-lr", "--config", "tiny.json", "--set", "optimizer.nope=1"]);
    assert_eq!(code, 1);
    assert!(!tmp.path().join("runs").exists());
}

#[test]
fn sweep_override_is_echoed() {
    let tmp = setup();
    let args = [
        "sweep-lr", "--config", "tiny.json", "--set", "optimizer.kind=sgd", "--set", "optimizer.batch=64", "--quiet",
    ];
    let (code, s, _) = run(tmp.path(), &args);
    assert_eq!(code, 0);
    let report = read_json(run_dir(&s, tmp.path()).join("sweep.json"));
    assert_eq!(report["config"]["optimizer"]["batch"], 64);
    assert_eq!(report["overrides"][1], "optimizer.batch=64");
    let csv = fs::read_to_string(run_dir(&s, tmp.path()).join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn checkpoint_round_trip_and_corrupt_checkpoint() {
    let tmp = setup();
    let (code, s, _) = run(tmp.path(), &["run-case", "--config", "tiny.json", "--save-checkpoints", "--quiet"]);
    assert_eq!(code, 0);
    let case_dir = run_dir(&s, tmp.path());
    let ckpt = case_dir.join("checkpoint-seed0.bin");
    let (code, s, _) = run(
        tmp.path(),
        &["spectra", "--config", "tiny.json", "--checkpoint", ckpt.to_str().unwrap(), "--quiet"],
    );
    assert_eq!(code, 0);
    assert_eq!(s["source"], "checkpoint");
    let from_file = fs::read_to_string(run_dir(&s, tmp.path()).join("eig-weight.csv")).unwrap();
    let in_memory = fs::read_to_string(case_dir.join("eig-seed0-weight-trained.csv")).unwrap();
    assert_eq!(from_file, in_memory);

    fs::write(tmp.path().join("bad.bin"), b"not a checkpoint").unwrap();
    let (code, _, _) = run(tmp.path(), &["spectra", "--config", "tiny.json", "--checkpoint", "bad.bin"]);
    assert_eq!(code, 2);
}

#[test]
fn fresh_spectra_and_lazy_baseline() {
    let tmp = setup();
    let (code, s, _) = run(tmp.path(), &["spectra", "--config", "tiny.json", "--quiet"]);
    assert_eq!(code, 0);
    assert_eq!(s["source"], "init");
    let dir = run_dir(&s, tmp.path());
    assert_eq!(fs::read_to_string(dir.join("eig-weight.csv")).unwrap().lines().count(), 21);
    let (code, s, _) = run(tmp.path(), &["lazy-baseline", "--config", "tiny.json", "--seed", "7", "--quiet"]);
    assert_eq!(code, 0);
    let lazy = read_json(run_dir(&s, tmp.path()).join("lazy.json"));
    assert_eq!(lazy["trials"][0]["seed"], 7);
}

#[test]
fn convergence_check_exit_codes() {
    let tmp = setup();
    let ok = [
        "convergence-check", "--config", "tiny.json", "--set", "init={\"kind\":\"bounded-v\"}", "--set", "h=120",
        "--set", "train_layers=first-only", "--set", "convergence.eta_fraction=0.9", "--set", "convergence.epoch_cap=50",
    ];
    let (code, s, _) = run(tmp.path(), &ok);
    assert_eq!(code, 0, "{s}");
    assert_eq!(s["check"], "passed");
    let (code, s, _) = run(tmp.path(), &["convergence-check", "--config", "tiny.json", "--quiet"]);
    assert_eq!(code, 0);
    assert_eq!(s["check"], "precondition-unmet");
}

#[test]
fn scaling_and_kta_outputs() {
    let tmp = setup();
    let (code, s, _) = run(tmp.path(), &["scaling-study", "--config", "tiny.json", "--quiet"]);
    assert_eq!(code, 0);
    let csv = fs::read_to_string(run_dir(&s, tmp.path()).join("scaling.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 8);
    let (code, s, _) = run(
        tmp.path(),
        &["kta-evolution", "--config", "tiny.json", "--config", "tiny.json", "--set", "name=x", "--quiet"],
    );
    assert_eq!(code, 0);
    assert_eq!(s["final_kta"].as_array().unwrap().len(), 4);
}

#[test]
fn divergence_is_a_runtime_error() {
    let tmp = setup();
    let (code, s, _) = run(
        tmp.path(),
        &["run-case", "--config", "tiny.json", "--set", "optimizer.learning_rate=1e9", "--quiet"],
    );
    assert_eq!(code, 2);
    assert!(s["error"].as_str().unwrap().contains("diverged"));
}
