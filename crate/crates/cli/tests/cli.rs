use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn tlhead(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tlhead")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = tlhead(args);
    assert!(
        out.status.success(),
        "tlhead {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &TempDir) -> std::path::PathBuf {
    let features = dir.path().join("features.ftb");
    ok(&[
        "synth", "--out", p(&features), "--backbone", "resnet18", "--per-class", "40", "--dim", "24",
        "--separation", "6", "--seed", "3",
    ]);
    features
}

#[test]
fn synth_split_train_eval_round_trip() {
    let dir = TempDir::new().unwrap();
    let features = synth(&dir);
    let f = p(&features);

    let split_path = dir.path().join("split.json");
    let table = ok(&[
        "split", "--features", f, "--species", "Bird", "--n", "3", "--f", "0.2", "--j", "40", "--out",
        p(&split_path),
    ]);
    assert!(table.contains("bird_0"));
    let split: serde_json::Value = serde_json::from_slice(&std::fs::read(&split_path).unwrap()).unwrap();
    let classes = split["classes"].as_array().unwrap();
    assert_eq!(classes.len(), 3);
    for c in classes {
        assert_eq!(c["train"].as_array().unwrap().len(), 8);
        assert_eq!(c["val"].as_array().unwrap().len(), 4);
        assert_eq!(c["test"].as_array().unwrap().len(), 28);
    }

    let model = dir.path().join("head.ftb");
    let json = ok(&[
        "train", "--features", f, "--species", "Bird", "--n", "3", "--f", "0.2", "--j", "40", "--head",
        "baseline", "--epochs", "5", "--out", p(&model), "--format", "json",
    ]);
    let result: serde_json::Value = serde_json::from_str(&json).unwrap();
    let trained = result["test_accuracy_pct"].as_f64().unwrap();
    assert!(result["epochs_run"].as_u64().unwrap() <= 5);
    assert!((0.0..=100.0).contains(&trained));

    let eval = ok(&[
        "eval", "--features", f, "--species", "Bird", "--n", "3", "--model", p(&model), "--split", p(&split_path),
        "--format", "json",
    ]);
    let eval: serde_json::Value = serde_json::from_str(&eval).unwrap();
    assert_eq!(eval["images"].as_u64(), Some(84));
    assert!((eval["test_accuracy_pct"].as_f64().unwrap() - trained).abs() < 1e-9);
}

#[test]
fn training_is_reproducible_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    let features = synth(&dir);
    let run = |threads: &str| {
        let csv = ok(&[
            "train", "--features", p(&features), "--mixed", "--f", "0.2", "--j", "40", "--head", "proposed",
            "--epochs", "3", "--seed", "9", "--threads", threads, "--format", "csv",
        ]);
        assert!(csv.starts_with("epoch,lr,train_loss,val_loss\n"));
        csv
    };
    assert_eq!(run("1"), run("2"));
}

#[test]
fn experiment_and_report_render_the_same_tables() {
    let dir = TempDir::new().unwrap();
    let features = synth(&dir);
    let config = dir.path().join("exp.json");
    std::fs::write(
        &config,
        r#"{
            "backbone": "resnet18",
            "kind": [{"type": "a_type", "species": "Fruit", "n": 3}],
            "split": {"f": [0.2], "j": 40},
            "train": {"max_epochs": 3}
        }"#,
    )
    .unwrap();
    let report = dir.path().join("report.json");
    let shown = ok(&[
        "experiment", "--config", p(&config), "--features", p(&features), "--out", p(&report), "--format", "csv",
    ]);
    assert!(!shown.is_empty());
    assert_eq!(ok(&["report", "--input", p(&report), "--format", "csv"]), shown);
}

#[test]
fn similarity_lists_every_class() {
    let dir = TempDir::new().unwrap();
    let features = synth(&dir);
    let csv = ok(&["similarity", "--features", p(&features), "--format", "csv"]);
    assert_eq!(csv.lines().count(), 1 + 20);
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let features = synth(&dir);
    let f = p(&features);
    let cases: &[&[&str]] = &[
        &["split", "--features", f],
        &["split", "--features", f, "--species", "Bird", "--f", "0.3", "--j", "5"],
        &["split", "--features", f, "--species", "Mushroom"],
        &["split", "--features", f, "--species", "Bird", "--n", "7"],
        &["train", "--features", f, "--species", "Bird", "--head", "wide"],
    ];
    for args in cases {
        assert_eq!(tlhead(args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn unreadable_input_exits_with_three() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope.ftb");
    let out = tlhead(&["similarity", "--features", p(&missing)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
