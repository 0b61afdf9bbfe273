use std::path::Path;
use std::process::{Command, Output};

use ctquant::biomarkers::Biomarker;
use ctquant::features::{read_features_json, write_features_csv};
use ctquant::training::synthetic_cohort;
use serde_json::Value;

const SMALL_MODEL: &str = r#"{"model": {"embed_width": 8, "head_width": 4, "encoder_hidden": 8}, "replicates": 50}"#;

fn ctquant(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctquant"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = ctquant(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

/// Writes a labelled cohort, a small-model config and a trained model.
fn trained(dir: &Path) {
    let mut buf = Vec::new();
    write_features_csv(&mut buf, &synthetic_cohort(60, 512, Biomarker::Pfatv, 4)).unwrap();
    std::fs::write(dir.join("features.csv"), buf).unwrap();
    std::fs::write(dir.join("config.json"), SMALL_MODEL).unwrap();
    ok(
        dir,
        &["train", "--config", "config.json", "--features", "features.csv", "--epochs", "2", "--out", "model.json"],
    );
}

#[test]
fn extract_matches_golden_table() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["phantom", "--bundled", "baseline", "--out", "ph"]);
    ok(dir.path(), &["extract", "--batch", "ph/scans.csv", "--out", "bio.csv"]);
    let got = std::fs::read_to_string(dir.path().join("bio.csv")).unwrap();
    let golden = include_str!("golden/baseline_extract.csv");
    assert_eq!(got, golden);
}

#[test]
fn every_command_writes_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["phantom", "--bundled", "baseline", "--out", "ph", "--seed", "2"]);
    let m = json(&d.join("ph/manifest.json"));
    assert_eq!(m["command"], "phantom");
    assert_eq!(m["seed"], 2);
    ok(d, &["featurize", "--batch", "ph/scans.csv", "--out", "feat.json", "--format", "json"]);
    let records = read_features_json(std::fs::File::open(d.join("feat.json")).unwrap()).unwrap();
    assert_eq!(records.len(), 1);
    assert_eq!(records[0].x1.len(), 512);
    let m = json(&d.join("feat.manifest.json"));
    assert!(m["inputs"].as_object().unwrap().keys().any(|k| k.ends_with("volume.ctqh")));
    assert!(m["error"].is_null());

    trained(d);
    for (cmd, args) in [
        ("train", vec![]),
        ("predict", vec!["predict", "--model", "model.json", "--features", "features.csv", "--out", "pred.csv", "--format", "csv"]),
        ("evaluate", vec!["evaluate", "--config", "config.json", "--model", "model.json", "--features", "features.csv", "--threshold-from", "model.train.json", "--out", "eval.json"]),
        ("explain", vec!["explain", "--model", "model.json", "--features", "features.csv", "--scan-id", "synthetic-00003", "--out", "why.txt"]),
    ] {
        if !args.is_empty() {
            ok(d, &args);
        }
        let manifest = match cmd {
            "train" => "model.manifest.json",
            "predict" => "pred.manifest.json",
            "evaluate" => "eval.manifest.json",
            _ => "why.manifest.json",
        };
        let m = json(&d.join(manifest));
        assert_eq!(m["command"], cmd);
        assert!(m["duration_s"].as_f64().unwrap() >= 0.0);
        assert!(!m["outputs"].as_object().unwrap().is_empty(), "{cmd}");
    }
    let pred = std::fs::read_to_string(d.join("pred.csv")).unwrap();
    assert!(pred.starts_with("scan_id,probability"));
    assert_eq!(pred.lines().count(), 61);
    let roc = std::fs::read_to_string(d.join("eval.roc.csv")).unwrap();
    assert!(roc.lines().count() > 2);
    let eval = json(&d.join("eval.json"));
    let threshold = json(&d.join("model.train.json"))["threshold"]["threshold"].clone();
    assert_eq!(eval["threshold"], threshold);
}

#[test]
fn explanation_groups_sum_to_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained(d);
    for id in ["synthetic-00000", "synthetic-00017", "synthetic-00042"] {
        let args = ["explain", "--model", "model.json", "--features", "features.csv", "--scan-id", id, "--format", "json"];
        let e: Value = serde_json::from_slice(&ok(d, &args).stdout).unwrap();
        let scores: std::collections::HashMap<String, f64> = e["contributions"]
            .as_array()
            .unwrap()
            .iter()
            .map(|c| (c["feature"].as_str().unwrap().to_string(), c["score"].as_f64().unwrap()))
            .collect();
        let mut total = 0.0;
        for g in e["groups"].as_array().unwrap() {
            let direct: f64 = g["members"].as_array().unwrap().iter().map(|m| scores[m.as_str().unwrap()]).sum();
            let subtotal = g["subtotal"].as_f64().unwrap();
            assert!((subtotal - direct).abs() < 1e-12);
            total += subtotal;
        }
        assert!((total - 1.0).abs() < 1e-6, "{id}: {total}");
    }
}

#[test]
fn failures_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(ctquant(d, &["extract", "--bogus"]).status.code(), Some(2));
    assert_eq!(ctquant(d, &["--help"]).status.code(), Some(0));
    let missing = ctquant(d, &["extract", "--volume", "nope.ctqh", "--out", "x.csv"]);
    assert_eq!(missing.status.code(), Some(3));
    assert!(!missing.stderr.is_empty());
    let m = json(&d.join("x.manifest.json"));
    assert!(m["error"].is_string());
    assert_eq!(ctquant(d, &["phantom", "--bundled", "nonexistent", "--out", "ph"]).status.code(), Some(2));
    let mut spec: Value = serde_json::from_str(ctquant::phantom::BUNDLED[0].1).unwrap();
    spec["noise_sigma_hu"] = (-1.0).into();
    std::fs::write(d.join("flat.json"), spec.to_string()).unwrap();
    let out = ctquant(d, &["phantom", "--spec", "flat.json", "--out", "flat"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));

    trained(d);
    let mut model = std::fs::read_to_string(d.join("model.json")).unwrap();
    let at = model.find("\"data\":[").unwrap() + 8;
    let digit = model[at..].find(|c: char| c.is_ascii_digit()).unwrap() + at;
    let replacement = if &model[digit..=digit] == "7" { "3" } else { "7" };
    model.replace_range(digit..=digit, replacement);
    std::fs::write(d.join("tampered.json"), model).unwrap();
    let out = ctquant(d, &["predict", "--model", "tampered.json", "--features", "features.csv"]);
    assert_eq!(out.status.code(), Some(5));
}
