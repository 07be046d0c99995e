mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn skge(args: &[&str], paths: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_skge"));
    cmd.args(args).env_remove("SKGE_DATA_ROOT");
    for (flag, p) in paths {
        cmd.arg(flag).arg(p);
    }
    cmd.output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

struct Fixture {
    _tmp: tempfile::TempDir,
    data: PathBuf,
    out: PathBuf,
}

fn trained(model: &str) -> Fixture {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("kg");
    common::write_toy_dataset(&data, 3, 30, 3, 200);
    let out = tmp.path().join("run");
    let o = skge(
        &[
            "train",
            "--model",
            model,
            "--dim",
            "8",
            "--epochs",
            "10",
            "--eval-every",
            "5",
            "--seed",
            "1",
        ],
        &[("--data", &data), ("--out", &out)],
    );
    ok(&o);
    Fixture { _tmp: tmp, data, out }
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn train_writes_three_artifacts() {
    let f = trained("skge");
    for name in ["model.ckpt", "train.log.jsonl", "config.resolved"] {
        assert!(f.out.join(name).is_file(), "{name}");
    }
    let log = fs::read_to_string(f.out.join("train.log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 10);
    let first: Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert!(first["mean_loss"].is_number() && first["seconds"].is_number());
    let resolved = fs::read_to_string(f.out.join("config.resolved")).unwrap();
    assert!(resolved.contains("model = skge") && resolved.contains("dim = 8"));
}

#[test]
fn resolved_config_reproduces_the_run() {
    let f = trained("transe");
    let again = f.out.parent().unwrap().join("again");
    let o = skge(
        &["train", "--record-timing", "false", "--threads", "1"],
        &[("--config", &f.out.join("config.resolved")), ("--out", &again)],
    );
    ok(&o);
    let o = skge(
        &["train", "--record-timing", "false", "--threads", "1"],
        &[
            ("--config", &again.join("config.resolved")),
            ("--out", &again.join("b")),
        ],
    );
    ok(&o);
    for name in ["model.ckpt", "train.log.jsonl"] {
        assert_eq!(
            fs::read(again.join(name)).unwrap(),
            fs::read(again.join("b").join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn eval_writes_metrics_ranks_and_categories() {
    let f = trained("skge");
    let o = skge(
        &["eval", "--by-relation-type"],
        &[("--data", &f.data), ("--out", &f.out)],
    );
    ok(&o);
    let m = json(&f.out.join("metrics.json"));
    let get = |k: &str| m[k].as_f64().unwrap();
    assert!(0.0 < get("mrr") && get("mrr") <= 1.0);
    assert!(get("hits1") <= get("hits3") && get("hits3") <= get("hits10"));
    let n = m["n_queries"].as_u64().unwrap();
    let ranks = fs::read_to_string(f.out.join("ranks.csv")).unwrap();
    assert_eq!(ranks.lines().count() as u64, n + 1);
    assert!(ranks.starts_with("triple_index,direction,rank,reciprocal_rank"));
    let cats = json(&f.out.join("metrics_by_category.json"));
    let keys: Vec<&str> = cats.as_object().unwrap().keys().map(String::as_str).collect();
    for k in ["1-to-1", "1-to-N", "N-to-1", "N-to-N"] {
        assert!(keys.contains(&k), "{k} missing from {keys:?}");
    }
    let total: u64 = cats
        .as_object()
        .unwrap()
        .values()
        .map(|v| v["n_queries"].as_u64().unwrap())
        .sum();
    assert_eq!(total, n);
}

#[test]
fn eval_rejects_a_mismatched_checkpoint() {
    let f = trained("skge");
    let other = f.out.parent().unwrap().join("other");
    common::write_toy_dataset(&other, 4, 25, 3, 150);
    let o = skge(
        &["eval"],
        &[
            ("--data", &other),
            ("--checkpoint", &f.out.join("model.ckpt")),
            ("--out", &f.out),
        ],
    );
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("30") && err.contains("25"), "{err}");
}

#[test]
fn missing_split_file_names_the_path() {
    let f = trained("skge");
    fs::remove_file(f.data.join("test.txt")).unwrap();
    let o = skge(&["train", "--epochs", "1"], &[("--data", &f.data), ("--out", &f.out)]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("test.txt"), "{err}");
}

#[test]
fn analyze_negatives_respects_the_sphere() {
    let f = trained("skge");
    let o = skge(
        &["analyze", "negatives", "--q", "20", "--k-neg", "64", "--bins", "10"],
        &[("--data", &f.data), ("--out", &f.out)],
    );
    ok(&o);
    let csv = fs::read_to_string(f.out.join("negatives_hist.csv")).unwrap();
    let mut total = 0;
    for line in csv.lines().skip(1) {
        let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert!(cols[1] <= 2.0 + 1e-5 || cols[2] == 0.0);
        total += cols[2] as usize;
    }
    let report = json(&f.out.join("negatives.json"));
    assert_eq!(report["samples"].as_u64().unwrap() as usize, total);
    assert!(report["max"].as_f64().unwrap() <= 2.0 + 1e-5);
}

#[test]
fn analyze_knn_lists_k_ascending_neighbours() {
    let f = trained("skge");
    let o = skge(
        &["analyze", "knn", "--entity", "e0", "--k", "5"],
        &[("--data", &f.data), ("--out", &f.out)],
    );
    let stdout = ok(&o);
    let dists: Vec<f64> = stdout
        .lines()
        .map(|l| l.split('\t').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(dists.len(), 5);
    assert!(dists.windows(2).all(|w| w[0] <= w[1]));
    assert!(!stdout.contains("e0\t"));

    let names = f.out.join("names.tsv");
    fs::write(&names, "e0\tZero Entity\n").unwrap();
    let o = skge(
        &["analyze", "knn", "--entity", "Zero Entity", "--k", "2"],
        &[("--data", &f.data), ("--out", &f.out), ("--names", &names)],
    );
    ok(&o);
    assert_eq!(json(&f.out.join("knn.json"))["anchor"], "Zero Entity");

    let o = skge(
        &["analyze", "knn", "--entity", "nobody"],
        &[("--data", &f.data), ("--out", &f.out)],
    );
    assert!(!o.status.success());
}

#[test]
fn significance_on_identical_ranks_is_degenerate() {
    let f = trained("skge");
    ok(&skge(&["eval"], &[("--data", &f.data), ("--out", &f.out)]));
    let ranks = f.out.join("ranks.csv");
    let o = skge(
        &["analyze", "significance"],
        &[("--ranks-a", &ranks), ("--ranks-b", &ranks), ("--out", &f.out)],
    );
    let stdout = ok(&o);
    assert!(stdout.contains("p = 1") && stdout.contains("degenerate"), "{stdout}");
    assert_eq!(json(&f.out.join("significance.json"))["p"], 1.0);
}

#[test]
fn stats_prints_counts() {
    let f = trained("skge");
    let stdout = ok(&skge(&["stats"], &[("--data", &f.data)]));
    assert!(stdout.contains("entities") && stdout.contains("30"), "{stdout}");
}

#[test]
fn grid_keeps_the_best_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("kg");
    common::write_toy_dataset(&data, 5, 20, 2, 120);
    let out = tmp.path().join("grid");
    let o = skge(
        &[
            "grid",
            "--dim",
            "4",
            "--epochs",
            "4",
            "--eval-every",
            "2",
            "--grid-margins",
            "1,3",
            "--grid-lrs",
            "0.01",
        ],
        &[("--data", &data), ("--out", &out)],
    );
    ok(&o);
    let cells = fs::read_to_string(out.join("grid.jsonl")).unwrap();
    assert_eq!(cells.lines().count(), 2);
    let best = cells
        .lines()
        .map(|l| {
            serde_json::from_str::<Value>(l).unwrap()["best_val_mrr"]
                .as_f64()
                .unwrap()
        })
        .fold(0.0, f64::max);
    let summary: Value = serde_json::from_str(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(summary["best_val_mrr"].as_f64().unwrap(), best);
    assert!(out.join("model.ckpt").is_file() && out.join("config.resolved").is_file());
}

#[test]
fn bad_flag_values_fail_cleanly() {
    let o = skge(&["train", "--dim", "abc", "--data", "/nonexistent"], &[]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("dim"));
    let o = skge(&["stats"], &[]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("SKGE_DATA_ROOT"));
}

#[test]
fn data_root_env_resolves_relative_names() {
    let tmp = tempfile::tempdir().unwrap();
    common::write_toy_dataset(&tmp.path().join("kg"), 6, 10, 2, 40);
    let o = Command::new(env!("CARGO_BIN_EXE_skge"))
        .args(["stats", "--data", "kg"])
        .env("SKGE_DATA_ROOT", tmp.path())
        .current_dir(tmp.path().join("kg"))
        .output()
        .unwrap();
    ok(&o);
}
