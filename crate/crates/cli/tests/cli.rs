use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use anomalyzer_core::synth::{
    generate_normal, inject, write_png, AnomalyInjector, AnomalyKind, SynthSpec,
};
use anomalyzer_core::AnomalyzerModel;

const SIZE: &str = "128";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_anomalyzer"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A synthetic set and a model trained on it, shared by the tests.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    manifest: PathBuf,
    model: PathBuf,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let data = root.join("data");
        ok(&["synth", "--out", p(&data), "--count", "80", "--anomaly-fraction", "0.5", "--seed", "5", "--size", SIZE]);
        let manifest = data.join("manifest.csv");
        let model = root.join("model.json");
        ok(&[
            "train", "--manifest", p(&manifest), "--canonical-size", SIZE, "--seed", "1",
            "--out", p(&model), "--split-dir", p(&root.join("split")),
        ]);
        Fixture {
            _dir: dir,
            root,
            manifest,
            model,
        }
    })
}

fn spec(seed: u64) -> SynthSpec {
    SynthSpec {
        size: 128,
        seed,
        ..SynthSpec::default()
    }
}

#[test]
fn version_lists_formats() {
    let out = ok(&["--version"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("anomalyzer "));
    assert!(text.contains("model format 1"));
    assert!(text.contains("baseline format 1"));
}

#[test]
fn score_clean_image_exits_zero() {
    let f = fixture();
    let img = f.root.join("clean_probe.png");
    write_png(&img, &generate_normal(&spec(12_345)).unwrap()).unwrap();
    let out = run(&["score", "--model", p(&f.model), "--image", p(&img)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let sidecar: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(sidecar["image_id"], "clean_probe");
    assert_eq!(sidecar["verdict"], "non_anomalous");
}

#[test]
fn score_occluded_image_exits_one() {
    let f = fixture();
    let s = spec(777);
    let clean = generate_normal(&s).unwrap();
    let occluded = inject(
        &clean,
        &s,
        &AnomalyInjector {
            kind: AnomalyKind::Occlusion,
            severity: 1.0,
            seed: 3,
        },
    )
    .unwrap();
    let img = f.root.join("occluded_probe.png");
    write_png(&img, &occluded).unwrap();
    let overlay = f.root.join("occluded_overlay.png");
    let out = run(&["score", "--model", p(&f.model), "--image", p(&img), "--overlay", p(&overlay)]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(overlay.exists());
    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(overlay.with_extension("json")).unwrap()).unwrap();
    assert_eq!(sidecar["verdict"], "anomalous");
    assert!(sidecar["flagged"].as_array().unwrap().len() >= 4);
}

#[test]
fn score_errors_exit_two() {
    let f = fixture();
    let out = run(&["score", "--model", "/nonexistent/model.json", "--image", p(&f.manifest)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    // Not an image.
    let out = run(&["score", "--model", p(&f.model), "--image", p(&f.manifest)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_is_byte_identical() {
    let f = fixture();
    let again = f.root.join("model_again.json");
    ok(&[
        "--jobs", "2", "train", "--manifest", p(&f.manifest), "--canonical-size", SIZE, "--seed", "1",
        "--out", p(&again),
    ]);
    assert_eq!(std::fs::read(&f.model).unwrap(), std::fs::read(&again).unwrap());
    let model = AnomalyzerModel::load(&again).unwrap();
    assert_eq!((model.n(), model.theta(), model.min_corrupt_cells()), (16, 0.7, 4));
    for name in ["split.json", "train.csv", "validation.csv", "test.csv"] {
        assert!(f.root.join("split").join(name).exists(), "{name}");
    }
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let path = e.unwrap().path();
            (path.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&path).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn synth_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    let args = |out: &Path, seed: &'static str| {
        ok(&["synth", "--out", p(out), "--count", "12", "--seed", seed, "--size", "64"]);
    };
    args(&a, "9");
    args(&b, "9");
    args(&c, "10");
    assert_eq!(dir_bytes(&a), dir_bytes(&b));
    assert_ne!(dir_bytes(&a), dir_bytes(&c));
    assert_eq!(dir_bytes(&a).len(), 14);
}

#[test]
fn config_file_and_flag_precedence() {
    let f = fixture();
    let cfg = f.root.join("cfg.json");
    std::fs::write(&cfg, r#"{"theta": 0.8, "min_cells": 3, "canonical_size": 128}"#).unwrap();
    let out = f.root.join("model_cfg.json");
    ok(&["--config", p(&cfg), "train", "--manifest", p(&f.manifest), "--theta", "0.75", "--out", p(&out)]);
    let m = AnomalyzerModel::load(&out).unwrap();
    assert_eq!((m.theta(), m.min_corrupt_cells(), m.canonical_size()), (0.75, 3, 128));

    // Invalid settings are rejected before the manifest is read.
    let r = run(&["train", "--manifest", "/nonexistent.csv", "--theta", "0.95", "--out", p(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("theta"));
    std::fs::write(&cfg, r#"{"thetta": 0.8}"#).unwrap();
    let r = run(&["--config", p(&cfg), "train", "--manifest", p(&f.manifest), "--out", p(&out)]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn evaluate_and_sweep_reports() {
    let f = fixture();
    let test_manifest = f.root.join("split").join("test.csv");
    let report = f.root.join("report");
    let out = ok(&["evaluate", "--model", p(&f.model), "--manifest", p(&test_manifest), "--report", p(&report)]);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("anomalyzer: tp="));
    let metrics = std::fs::read_to_string(report.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("detector,tp,tn,fp,fn,f1,"));
    let verdicts = std::fs::read_to_string(report.join("verdicts.csv")).unwrap();
    assert_eq!(verdicts.lines().count(), 1 + 16);

    let extra = f.root.join("extra");
    ok(&["synth", "--out", p(&extra), "--count", "40", "--anomaly-fraction", "0", "--seed", "6", "--size", SIZE, "--start-index", "500"]);
    let curve = f.root.join("curve.csv");
    let table = f.root.join("sweep_metrics.csv");
    ok(&[
        "sweep", "--model", p(&f.model), "--manifest", p(&test_manifest),
        "--extra-normals", p(&extra.join("manifest.csv")), "--ratios", "1..5",
        "--out", p(&curve), "--metrics", p(&table),
    ]);
    let text = std::fs::read_to_string(&curve).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "detector,ratio,balanced_accuracy");
    assert_eq!(lines.len(), 6);
    assert!(lines[1].starts_with("anomalyzer,1,"));
    assert!(std::fs::read_to_string(&table).unwrap().lines().count() == 6);

    // 8 test anomalies at 1:7 need 56 normals; only 8 + 40 exist.
    let r = run(&[
        "sweep", "--model", p(&f.model), "--manifest", p(&test_manifest),
        "--extra-normals", p(&extra.join("manifest.csv")), "--ratios", "7", "--out", p(&curve),
    ]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn baseline_train_and_evaluate() {
    let f = fixture();
    let grid = f.root.join("grid.json");
    std::fs::write(&grid, r#"{"c": [1, 10], "gamma": ["scale", "auto"], "kernel": ["rbf", "linear"]}"#).unwrap();
    let det = f.root.join("svm.json");
    let report = f.root.join("svm_grid.csv");
    ok(&[
        "baseline", "train", "--kind", "svm", "--manifest", p(&f.manifest), "--grid-search", p(&grid),
        "--feature-grid", "8", "--canonical-size", SIZE, "--seed", "1", "--out", p(&det), "--report", p(&report),
    ]);
    assert_eq!(std::fs::read_to_string(&report).unwrap().lines().count(), 1 + 8);
    let out_dir = f.root.join("svm_report");
    let out = ok(&[
        "baseline", "evaluate", "--model", p(&det), "--manifest", p(&f.root.join("split").join("test.csv")),
        "--canonical-size", SIZE, "--report", p(&out_dir),
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("svm: tp="));

    let oc = f.root.join("ocsvm.json");
    ok(&[
        "baseline", "train", "--kind", "ocsvm", "--manifest", p(&f.manifest), "--grid-search",
        p(&{
            let g = f.root.join("oc_grid.json");
            std::fs::write(&g, r#"{"nu": [0.1, 0.5], "gamma": ["scale"], "kernel": ["rbf"]}"#).unwrap();
            g
        }),
        "--feature-grid", "8", "--canonical-size", SIZE, "--out", p(&oc),
    ]);
    let text = std::fs::read_to_string(&oc).unwrap();
    assert!(text.contains(r#""kind":"ocsvm""#));
}
