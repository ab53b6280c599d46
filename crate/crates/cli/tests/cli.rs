use std::path::Path;
use std::process::{Command, Output};

fn sclld(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sclld")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn failures_print_one_categorized_line() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    std::fs::write(&config, r#"{"foo": 1}"#).unwrap();
    let out = sclld(&["cnn", "--config", path(&config)]);
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1, "{stderr}");
    assert!(stderr.starts_with("error[config]: "), "{stderr}");

    let out = sclld(&["split", "--manifest", path(&dir.path().join("missing.csv")), "--out", path(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error["));
}

#[test]
fn synth_then_split() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let out = sclld(&["synth", "--count", "100", "--seed", "4", "--out", path(&corpus)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(corpus.join("manifest.csv").exists());

    let pools = dir.path().join("pools");
    let out = sclld(&[
        "split",
        "--manifest",
        path(&corpus.join("manifest.csv")),
        "--fraction",
        "0.1",
        "--out",
        path(&pools),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = |name: &str| std::fs::read_to_string(pools.join(name)).unwrap().lines().count() - 1;
    assert_eq!(rows("test.csv"), 20);
    assert_eq!(rows("validation.csv"), 2);
    assert_eq!(rows("train_labelled.csv"), 6);
    assert_eq!(rows("train_unlabelled.csv"), 72);

    let out = sclld(&["synth", "--count", "3", "--out", path(&corpus)]);
    assert!(!out.status.success());
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let out = sclld(&[
        "cnn",
        "--synthetic-count",
        "100",
        "--finetune-epochs-max",
        "1",
        "--output-dir",
        path(&run),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let written = std::fs::read_to_string(run.join("config.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&written).unwrap();
    assert_eq!(v["method"], "cnn");
    assert_eq!(v["finetune_epochs_max"], 1);
    assert_eq!(v["corpus"]["synthetic"]["count"], 100);
    assert!(run.join("metrics.csv").exists());
}
