use std::fs;
use std::path::Path;

use flowgan_cli::{run_command, EXIT_DATA, EXIT_USAGE};
use serde_json::Value;

fn run(cmd: &str, work: &Path, extra: &[&str]) -> i32 {
    let mut argv = vec!["flowgan", cmd, "--work_dir", work.to_str().unwrap()];
    argv.extend(extra);
    run_command(argv)
}

fn metrics(work: &Path, name: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(work.join(name)).unwrap()).unwrap()
}

#[test]
fn blacklist_sized_synthetic_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    assert_eq!(run("synth", w, &[]), 0);
    assert_eq!(run("train-clf", w, &[]), 0);
    assert_eq!(run("evaluate", w, &[]), 0);
    let before = metrics(w, "metrics.json");
    assert!(before["metrics"]["accuracy"].as_f64().unwrap() > 0.98);
    assert!(before["metrics"]["recall"].as_f64().unwrap() < 0.2, "{before}");

    assert_eq!(run("train-gan", w, &[]), 0);
    assert_eq!(run("balance", w, &["--balance_test", "true"]), 0);
    assert_eq!(run("train-clf", w, &["--balanced", "true"]), 0);
    assert_eq!(run("evaluate", w, &["--balanced", "true", "--balance_test", "true"]), 0);
    let after = metrics(w, "metrics_balanced.json");
    assert!(after["metrics"]["recall"].as_f64().unwrap() >= 0.9, "{after}");
    assert!(after["n_synthetic"].as_u64().unwrap() > 0);

    assert_eq!(run("report", w, &[]), 0);
    let text = fs::read_to_string(w.join("report.txt")).unwrap();
    assert!(text.contains("Recall") && text.contains("balanced"), "{text}");
    for m in ["synth", "train-clf", "train-clf_balanced", "evaluate", "evaluate_balanced", "train-gan", "balance", "report"] {
        let man = metrics(w, &format!("{m}.manifest.json"));
        assert_eq!(man["seed"], 7);
        assert_eq!(man["config_sha256"].as_str().unwrap().len(), 64);
    }
}

#[test]
fn evaluate_without_model_is_a_data_error_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    assert_eq!(run("synth", w, &["--attack", "10", "--nonattack", "100"]), 0);
    let before: Vec<_> = fs::read_dir(w).unwrap().flatten().map(|e| e.file_name()).collect();
    assert_eq!(run("evaluate", w, &[]), EXIT_DATA);
    let after: Vec<_> = fs::read_dir(w).unwrap().flatten().map(|e| e.file_name()).collect();
    assert_eq!(before.len(), after.len());
    assert!(!w.join("metrics.json").exists());
}

#[test]
fn usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    assert_eq!(run_command(["flowgan", "frobnicate"]), EXIT_USAGE);
    assert_eq!(run("synth", w, &["--no_such_key", "1"]), EXIT_USAGE);
    assert_eq!(run("synth", w, &["--seed", "seven"]), EXIT_USAGE);
    assert_eq!(run("synth", w, &["--overlap", "2"]), EXIT_USAGE);
    assert_eq!(run_command(["flowgan", "--version"]), 0);
}

#[test]
fn config_file_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("work");
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"attack": 12, "nonattack": 80, "seed": 3}"#).unwrap();
    let code = run("synth", &w, &["--config", cfg.to_str().unwrap(), "--seed=4"]);
    assert_eq!(code, 0);
    let man = metrics(&w, "synth.manifest.json");
    assert_eq!(man["seed"], 4);
    assert_eq!(man["config"]["attack"], 12);
    let rows = fs::read_to_string(w.join("encoded.csv")).unwrap().lines().count();
    assert_eq!(rows, 1 + 12 + 80);
}

#[test]
fn already_balanced_input_is_copied() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    let small = ["--attack", "40", "--nonattack", "40", "--gan_epochs", "2"];
    assert_eq!(run("synth", w, &small), 0);
    assert_eq!(run("train-gan", w, &small), 0);
    assert_eq!(run("balance", w, &small), 0);
    assert_eq!(fs::read(w.join("train.csv")).unwrap(), fs::read(w.join("train_balanced.csv")).unwrap());
}
