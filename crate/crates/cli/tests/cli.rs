use std::path::Path;
use std::process::{Command, Output};

use misbehave::evalreport::read_report;
use serde_json::json;

fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_misbehave"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn misbehave")
}

fn ok(out: &Path, args: &[&str]) {
    let o = run(out, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

/// A small corpus keeps these tests quick.
fn small_config(dir: &Path) -> String {
    let cfg = json!({
        "synth": {
            "n_benign": 600,
            "per_attack": {"1": 60, "2": 60, "4": 60, "8": 60, "16": 60}
        },
        "stack": {
            "forest": {"n_estimators": 10},
            "boosted": {"iterations": 30, "depth": 4}
        },
        "explain": {"rows": 10, "interaction_rows": 3}
    });
    let path = dir.join("config.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    path.display().to_string()
}

fn data_rows(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn prepare_splits_by_ratio_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = small_config(dir.path());
    ok(&out, &["--config", &cfg, "synth"]);
    let input = out.join("synth/synth.csv");
    let input = input.to_str().unwrap();
    ok(&out, &["--config", &cfg, "prepare", "--input", input, "--ratio", "0.7"]);

    let unit = out.join("data/binary");
    let train = data_rows(&unit.join("train.csv"));
    let test = data_rows(&unit.join("test.csv"));
    assert_eq!(train + test, 900);
    assert!((train as f64 - 630.0).abs() <= 2.0, "train rows {train}");
    assert!(unit.join("run.json").exists());
    assert!(out.join("data/run.json").exists());

    let before = std::fs::read(unit.join("train.csv")).unwrap();
    ok(&out, &["--config", &cfg, "prepare", "--input", input, "--ratio", "0.7"]);
    assert_eq!(before, std::fs::read(unit.join("train.csv")).unwrap());
}

#[test]
fn per_attack_mode_builds_one_unit_per_attack() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = small_config(dir.path());
    ok(&out, &["--config", &cfg, "synth"]);
    let input = out.join("synth/synth.csv");
    ok(
        &out,
        &["--config", &cfg, "--mode", "per-attack", "prepare", "--input", input.to_str().unwrap()],
    );
    let mut units: Vec<String> = std::fs::read_dir(out.join("data"))
        .unwrap()
        .filter_map(|e| {
            let e = e.unwrap();
            e.file_type().unwrap().is_dir().then(|| e.file_name().to_string_lossy().into_owned())
        })
        .collect();
    units.sort();
    assert_eq!(
        units,
        [
            "constant_attack",
            "constant_offset_attack",
            "eventual_stop_attack",
            "random_attack",
            "random_offset_attack"
        ]
    );
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("data/random_attack/train.manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["class_names"], json!(["BENIGN", "Random Attack"]));
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = small_config(dir.path());
    ok(&out, &["--config", &cfg, "synth"]);
    let input = out.join("synth/synth.csv");
    ok(&out, &["--config", &cfg, "--mode", "multiclass", "prepare", "--input", input.to_str().unwrap()]);
    for cmd in [&["train"][..], &["evaluate"], &["evaluate", "--split", "train"], &["explain"], &["report"]] {
        let mut args = vec!["--config", cfg.as_str(), "--mode", "multiclass"];
        args.extend_from_slice(cmd);
        ok(&out, &args);
    }
    for f in [
        "model/multiclass/model.json",
        "eval/multiclass/metrics.json",
        "eval/multiclass/confusion.csv",
        "eval/multiclass/metrics.md",
        "eval/multiclass/forest/metrics.json",
        "eval/multiclass/boosted/metrics.json",
        "explain/multiclass/forest/shap_summary.csv",
        "explain/multiclass/forest/shap_scatter.csv",
        "explain/multiclass/boosted/shap_interactions.csv",
        "report/report.md",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    for stage in ["data", "model", "eval", "explain", "report"] {
        let info: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join(stage).join("run.json")).unwrap()).unwrap();
        assert_eq!(info["tool"], "misbehave");
        assert!(info["seeds"]["root"].is_u64());
    }
    let report = read_report(&out.join("eval/multiclass/metrics.json")).unwrap();
    assert_eq!(report.class_names.len(), 6);
    assert!(report.accuracy > 0.8, "accuracy {}", report.accuracy);
    let metrics = std::fs::read_to_string(out.join("eval/multiclass/metrics.json")).unwrap();
    assert!(!metrics.contains("timing"));
}

#[test]
fn training_accuracy_is_not_below_test_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = small_config(dir.path());
    ok(&out, &["--config", &cfg, "synth"]);
    let input = out.join("synth/synth.csv");
    ok(&out, &["--config", &cfg, "prepare", "--input", input.to_str().unwrap()]);
    ok(&out, &["--config", &cfg, "train"]);
    ok(&out, &["--config", &cfg, "evaluate", "--split", "test"]);
    let test = read_report(&out.join("eval/binary/metrics.json")).unwrap().accuracy;
    ok(&out, &["--config", &cfg, "evaluate", "--split", "train"]);
    let train = read_report(&out.join("eval/binary/metrics.json")).unwrap().accuracy;
    assert!(train >= test, "train {train} < test {test}");
}

#[test]
fn tune_resumes_from_history() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = small_config(dir.path());
    ok(&out, &["--config", &cfg, "synth"]);
    let input = out.join("synth/synth.csv");
    ok(&out, &["--config", &cfg, "prepare", "--input", input.to_str().unwrap()]);
    ok(&out, &["--config", &cfg, "tune", "--n-iter", "2", "--init-points", "2", "--cv-folds", "2"]);
    let trials = out.join("tune/binary/trials.jsonl");
    assert_eq!(data_rows(&trials) + 1, 2);
    let first = std::fs::read_to_string(&trials).unwrap();
    ok(
        &out,
        &["--config", &cfg, "tune", "--n-iter", "3", "--init-points", "2", "--cv-folds", "2", "--resume"],
    );
    let resumed = std::fs::read_to_string(&trials).unwrap();
    assert!(resumed.starts_with(&first));
    assert_eq!(resumed.lines().count(), 3);
    assert!(out.join("tune/binary/best_config.json").exists());
    ok(&out, &["--config", &cfg, "train", "--tuned"]);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert_eq!(run(&out, &["--help"]).status.code(), Some(0));
    assert_eq!(run(&out, &["--no-such-flag", "synth"]).status.code(), Some(1));
    assert_eq!(run(&out, &["train"]).status.code(), Some(1));
    assert_eq!(run(&out, &["prepare", "--ratio", "1.5"]).status.code(), Some(1));
    assert_eq!(run(&out, &["evaluate", "--split", "validation"]).status.code(), Some(1));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"no_such_field": 1}"#).unwrap();
    assert_eq!(run(&out, &["--config", bad.to_str().unwrap(), "synth"]).status.code(), Some(1));

    let csv = dir.path().join("broken.csv");
    std::fs::write(&csv, "rcvTime,sendTime\n1,2\n").unwrap();
    assert_eq!(run(&out, &["prepare", "--input", csv.to_str().unwrap()]).status.code(), Some(1));
}
