//! Drives the `effsys` binary end to end in a scratch directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn effsys(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_effsys"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = effsys(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(dir: &Path, rel: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("effsys-out").join(rel)).unwrap()).unwrap()
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    files
}

const FAST: [&str; 2] = ["--set", "train.epochs=8"];

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    for flag in ["--help", "--version"] {
        assert_eq!(effsys(dir.path(), &[flag]).status.code(), Some(0));
    }
}

#[test]
fn usage_and_config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(effsys(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(effsys(dir.path(), &["train"]).status.code(), Some(1));

    let out = effsys(dir.path(), &["--set", "generator.nosuch=3", "synth"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nosuch"));

    fs::write(dir.path().join("bad.toml"), "seed = 1\n[train]\nlearning_rat = 0.1\n").unwrap();
    let out = effsys(dir.path(), &["-c", "bad.toml", "show-config"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rat"));

    let out = effsys(dir.path(), &["--set", "eval.target_tpr=1.5", "show-config"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_artifacts_are_runtime_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = effsys(dir.path(), &["train", "--mode", "unified"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.csv"));
    ok(dir.path(), &["synth"]);
    assert_eq!(effsys(dir.path(), &["simulate"]).status.code(), Some(2));
}

#[test]
fn show_config_reloads_to_the_same_hash() {
    let dir = tempfile::tempdir().unwrap();
    let printed = ok(
        dir.path(),
        &["--seed", "9", "--set", "sim.crash_rate=0.05", "show-config"],
    );
    fs::write(dir.path().join("cfg.toml"), &printed).unwrap();
    let again = ok(dir.path(), &["-c", "cfg.toml", "show-config"]);
    assert_eq!(printed, again);
}

#[test]
fn default_synth_manifest_echoes_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["--seed", "11", "synth"]);
    let m = json(dir.path(), "data/manifest.json");
    assert_eq!(m["seed"], 11);
    assert_eq!(m["generator"]["seed"], 11);
    let labels = m["labels"].as_array().unwrap();
    assert_eq!(labels.len(), 10);
    assert!(labels
        .iter()
        .all(|l| l["train"].as_u64().unwrap() > 0 && l["test"].as_u64().unwrap() > 0));
    assert_eq!(m["ood"].as_object().unwrap().len(), 2);
    let csv = fs::read_to_string(dir.path().join("effsys-out/data/train.csv")).unwrap();
    assert!(csv.starts_with("# effsys synth\n# config_hash "));
}

#[test]
fn train_logs_schedule_endpoints_and_falling_loss() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth"]);
    let stdout = ok(dir.path(), &["--set", "train.epochs=4", "train", "--mode", "unified"]);
    assert!(stdout.contains("epoch   1"));
    let log = json(dir.path(), "models/unified.log.json");
    let lr: Vec<f64> = log["lr_trace"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(lr[0], 2e-3);
    assert_eq!(*lr.last().unwrap(), 0.0);
    assert_eq!(lr.len() as u64, log["steps"].as_u64().unwrap());
    let loss: Vec<f64> = log["epoch_losses"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert!(loss[0] > loss[1] && loss[1] > loss[2], "{loss:?}");

    ok(
        dir.path(),
        &[
            "--set",
            "train.epochs=2",
            "train",
            "--mode",
            "task-centric",
            "--task",
            "dirt",
        ],
    );
    assert!(dir.path().join("effsys-out/models/task-dirt.ckpt").exists());
    assert!(!dir.path().join("effsys-out/models/task-defect.ckpt").exists());
    let out = effsys(dir.path(), &["train", "--mode", "task-centric", "--task", "nosuch"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn full_workflow_reports_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let steps: Vec<Vec<&str>> = vec![
        vec!["synth"],
        vec!["train", "--mode", "unified"],
        vec!["train", "--mode", "multitask"],
        vec!["train", "--mode", "task-centric"],
        vec!["eval", "--suite", "task"],
        vec!["eval", "--suite", "ood"],
        vec!["eval", "--suite", "calibration"],
        vec!["compare"],
        vec!["simulate", "--topology", "task-centric"],
    ];
    let run_all = || {
        for s in &steps {
            let args: Vec<&str> = FAST.iter().copied().chain(s.iter().copied()).collect();
            ok(d, &args);
        }
        tree(&d.join("effsys-out"))
    };
    let first = run_all();
    let second = run_all();
    assert_eq!(first.keys().collect::<Vec<_>>(), second.keys().collect::<Vec<_>>());
    for (k, v) in &first {
        assert!(second[k] == *v, "{} differs between runs", k.display());
    }

    let task = json(d, "reports/task.json");
    for row in task["rows"].as_array().unwrap() {
        assert!(row["accuracy"].as_f64().unwrap() >= 0.9, "{row}");
    }
    let ood = json(d, "reports/ood.json");
    let rejection = ood["rejection"].as_array().unwrap();
    assert_eq!(rejection.len(), 4);
    for r in rejection.iter().filter(|r| r["detector"] == "max-logit") {
        assert!(r["auroc"].as_f64().unwrap() >= 0.9, "{r}");
    }
    assert!(d.join("effsys-out/reports/ood-scores-max-logit-receipts.csv").exists());

    let cal = json(d, "reports/calibration.json");
    let total: u64 = cal["histogram"]
        .as_array()
        .unwrap()
        .iter()
        .map(|h| h["count"].as_u64().unwrap())
        .sum();
    assert_eq!(
        total,
        fs::read_to_string(d.join("effsys-out/data/multilabel.csv"))
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with('#'))
            .count() as u64
            - 1
    );

    let cmp = json(d, "reports/compare.json");
    assert_eq!(cmp["efficiency"]["duplicate_inferences"], 0);
    assert_eq!(cmp["task_centric"]["duplicate_inferences"], cmp["expected_duplicates"]);
    assert_eq!(cmp["task_centric"]["tables"], 3);
    assert_eq!(
        cmp["task_centric"]["inferences"].as_u64().unwrap(),
        3 * cmp["efficiency"]["inferences"].as_u64().unwrap()
    );
    for pool in ["defect", "dirt", "bubble-wash"] {
        assert!(d
            .join(format!("effsys-out/runs/task-centric/table-{pool}.jsonl"))
            .exists());
    }
}

#[test]
fn crashing_replicas_still_account_for_every_message() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth"]);
    ok(d, &["--set", "train.epochs=2", "train", "--mode", "unified"]);
    let out = effsys(
        d,
        &[
            "--set",
            "sim.crash_rate=0.1",
            "--set",
            "sim.triggers=[0, 5, 40]",
            "simulate",
        ],
    );
    let metrics = fs::read_to_string(d.join("effsys-out/runs/efficiency-centric/metrics.csv")).unwrap();
    let summary: BTreeMap<&str, u64> = metrics
        .split("\n\n")
        .nth(1)
        .unwrap()
        .lines()
        .filter_map(|l| l.split_once(','))
        .filter_map(|(k, v)| Some((k, v.parse().ok()?)))
        .collect();
    assert!(summary["crashes"] > 0);
    assert_eq!(summary["records"], summary["published"]);
    assert_eq!(
        summary["classifications"] + summary["rejected"] + summary["dead_lettered"],
        summary["published"]
    );
    // Dead letters are reported through the exit code after the run is written.
    let expected = if summary["dead_lettered"] > 0 { 2 } else { 0 };
    assert_eq!(out.status.code(), Some(expected));
}
