// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &str = r#"
seed = 42
ccmr_items = 40

[sizes]
train = 400
test = 80

[classifier]
max_epochs = 4
accuracy_floor = 0.0

[explainer]
steps = 30
"#;

fn cause(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cause"))
        .current_dir(dir)
        .env_remove("CAUSE_REPORT_DIR")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = cause(dir, args);
    assert!(
        out.status.success(),
        "`cause {}` failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn coverage_bound_prints_the_repetition_count() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["coverage-bound", "--n", "557440", "--delta", "1e-5", "--ps", "0.2"]);
    assert_eq!(out.trim(), "111");
    let out = ok(
        dir.path(),
        &["coverage-bound", "--n", "557440", "--delta", "1e-5", "--ps", "0.2", "--batch-size", "16"],
    );
    assert!(out.contains("1776"));
}

#[test]
fn invalid_arguments_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = cause(dir.path(), &["coverage-bound", "--n", "10", "--delta", "0", "--ps", "0.2"]);
    assert!(!out.status.success());
    let out = cause(dir.path(), &["train-explainer", "--mode", "bogus"]);
    assert!(!out.status.success());
}

#[test]
fn missing_prerequisites_are_named() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    let out = cause(dir.path(), &["--config", "small.toml", "train-classifier"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("train.jsonl") && err.contains("gen-data"), "{err}");

    ok(dir.path(), &["--config", "small.toml", "gen-data"]);
    let out = cause(dir.path(), &["--config", "small.toml", "ccmr"]);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(!out.status.success());
    assert!(err.contains("classifier.ckpt"), "{err}");

    let out = cause(dir.path(), &["--config", "small.toml", "report"]);
    assert!(!out.status.success());
}

#[test]
fn missing_config_file_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = cause(dir.path(), &["--config", "nope.toml", "gen-data"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.toml"));
}

/// Runs the scripted pipeline and returns the contents of the metric files.
fn pipeline(dir: &Path) -> Vec<(String, String)> {
    fs::write(dir.join("small.toml"), SMALL).unwrap();
    let c = ["--config", "small.toml"];
    let run = |rest: &[&str]| ok(dir, &[&c[..], rest].concat());
    run(&["gen-data"]);
    run(&["train-classifier"]);
    run(&["train-explainer", "--mode", "cause"]);
    run(&["train-explainer", "--mode", "phi"]);
    run(&["eval", "--untrained"]);
    run(&["eval", "--mode", "cause"]);
    run(&["ccmr", "--mode", "cause"]);
    run(&["report"]);
    let reports = dir.join("runs/reports");
    let mut files: Vec<(String, String)> = fs::read_dir(&reports)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read_to_string(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn scripted_pipeline_emits_reproducible_stamped_artifacts() {
    let a = tempfile::tempdir().unwrap();
    let files = pipeline(a.path());
    let names: Vec<&str> = files.iter().map(|(n, _)| n.as_str()).collect();
    for expected in [
        "ccmr-cause.json",
        "ccmr-items-cause.csv",
        "classifier.json",
        "coverage-cause.csv",
        "coverage-phi.csv",
        "eval-cause.json",
        "eval-untrained.json",
        "history-cause.csv",
        "history-phi.csv",
        "loss-cause.svg",
        "loss-phi.svg",
        "summary.csv",
        "summary.md",
        "train-explainer-cause.json",
        "train-explainer-phi.json",
    ] {
        assert!(names.contains(&expected), "missing {expected} in {names:?}");
    }
    for ck in ["classifier.ckpt", "explainer-cause.ckpt", "explainer-phi.ckpt"] {
        assert!(a.path().join("runs/checkpoints").join(ck).exists());
    }

    let hash = json(&a.path().join("runs/reports/eval-cause.json"))["provenance"]["config_hash"]
        .as_str()
        .unwrap()
        .to_string();
    for (name, body) in &files {
        if name.ends_with(".json") {
            let v: Value = serde_json::from_str(body).unwrap();
            assert_eq!(v["provenance"]["config_hash"], hash.as_str(), "{name}");
            assert_eq!(v["provenance"]["seed"], 42, "{name}");
            assert_eq!(v["provenance"]["format_version"], 1, "{name}");
        } else if name.ends_with(".csv") {
            assert!(body.starts_with(&format!("# config_hash={hash} seed=42 format_version=1")), "{name}");
        }
    }
    let header = fs::read_to_string(a.path().join("runs/data/test.jsonl")).unwrap();
    let first: Value = serde_json::from_str(header.lines().next().unwrap()).unwrap();
    assert_eq!(first["header"]["config_hash"], hash.as_str());

    let b = tempfile::tempdir().unwrap();
    assert_eq!(files, pipeline(b.path()), "identical config must reproduce identical reports");
}

#[test]
fn untrained_explainer_scores_near_chance() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    let c = ["--config", "small.toml"];
    ok(dir.path(), &[&c[..], &["gen-data"]].concat());
    ok(dir.path(), &[&c[..], &["train-classifier"]].concat());
    ok(dir.path(), &[&c[..], &["eval", "--untrained"]].concat());
    let v = json(&dir.path().join("runs/reports/eval-untrained.json"));
    let f1 = v["simulation_macro_f1"].as_f64().unwrap();
    let chance = v["chance_macro_f1"].as_f64().unwrap();
    assert!((chance - 1.0 / 3.0).abs() < 1e-12);
    assert!(f1 <= chance + 0.15, "untrained macro-F1 {f1} is far above chance {chance}");
    assert_eq!(v["untrained"], true);
}

#[test]
fn report_dir_can_be_overridden_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    ok(dir.path(), &["--config", "small.toml", "gen-data"]);
    let out = Command::new(env!("CARGO_BIN_EXE_cause"))
        .current_dir(dir.path())
        .env("CAUSE_REPORT_DIR", "elsewhere")
        .args(["--config", "small.toml", "train-classifier"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("elsewhere/classifier.json").exists());
    assert!(!dir.path().join("runs/reports/classifier.json").exists());
}
