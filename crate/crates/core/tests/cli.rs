use std::path::Path;
use std::process::{Command, Output};

use canopy_core::cli::RunConfig;
use canopy_core::models::load_model;
use canopy_core::table::load_table;

fn canopy(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_canopy"))
        .current_dir(dir)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = canopy(dir, args);
    assert!(out.status.success(), "canopy {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

const SMALL: &str = "[synth]\nextent_m = 3840.0\npolygons_per_class = 40\n";

fn small_scene(dir: &Path) {
    std::fs::write(dir.join("small.toml"), SMALL).unwrap();
    ok(dir, &["synth", "--config", "small.toml", "--out", "scene"]);
    ok(dir, &["split", "--raster", "scene/chm.asc", "--polygons", "scene/polygons.geojson", "--out", "split"]);
}

#[test]
fn show_config_prints_the_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["show-config"]);
    let cfg: RunConfig = toml::from_str(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(cfg, RunConfig::default());
}

#[test]
fn config_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "[model]\nkind = \"svm\"\n").unwrap();
    let out = canopy(dir.path(), &["show-config", "--config", "bad.toml"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.toml"));
    let out = canopy(dir.path(), &["extract", "--raster", "missing.asc", "--polygons", "p.geojson", "--out", "x"]);
    assert!(!out.status.success());
}

#[test]
fn split_rejects_an_empty_partition() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("one.toml"), "[synth]\nextent_m = 1280.0\npolygons_per_class = 10\n").unwrap();
    ok(dir.path(), &["synth", "--config", "one.toml", "--out", "scene"]);
    let out = canopy(dir.path(), &["split", "--raster", "scene/chm.asc", "--polygons", "scene/polygons.geojson", "--out", "split"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty"));
}

#[test]
fn split_outputs_tag_every_region() {
    let dir = tempfile::tempdir().unwrap();
    small_scene(dir.path());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("split/split_report.json")).unwrap()).unwrap();
    let mut total = 0;
    for tag in ["train", "validation", "test"] {
        let fc: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(format!("split/{tag}.geojson"))).unwrap()).unwrap();
        let features = fc["features"].as_array().unwrap();
        assert!(features.iter().all(|f| f["properties"]["split"] == tag));
        assert_eq!(report["kept"][tag], features.len());
        total += features.len();
    }
    assert!(total >= 80);
}

#[test]
fn extraction_logs_failures_and_ignores_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    small_scene(dir.path());
    let far = r#"{"type":"FeatureCollection","features":[{"type":"Feature","properties":{"source_id":"far","label":"low"},
        "geometry":{"type":"Polygon","coordinates":[[[0,0],[200,0],[200,200],[0,200],[0,0]]]}}]}"#;
    std::fs::write(dir.path().join("far.geojson"), far).unwrap();
    for (jobs, out) in [("1", "one"), ("3", "three")] {
        ok(dir.path(), &["extract", "--raster", "scene/chm.asc", "--polygons", "split/train.geojson", "far.geojson", "--jobs", jobs, "--out", out]);
    }
    let a = std::fs::read(dir.path().join("one/train.csv")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("three/train.csv")).unwrap());
    let log = std::fs::read_to_string(dir.path().join("one/far.log.jsonl")).unwrap();
    let events: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(events[0]["event"], "extract_failed");
    assert_eq!(events[0]["source_id"], "far");
    assert_eq!(events.last().unwrap()["rows"], 0);
}

#[test]
fn predictions_match_the_library_model() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_scene(d);
    ok(d, &["extract", "--raster", "scene/chm.asc", "--polygons", "split/train.geojson", "split/validation.geojson", "split/test.geojson", "--out", "t"]);
    ok(d, &["train", "--train", "t/train.csv", "--valid", "t/validation.csv", "--model", "logistic", "--features", "ttd,tthm,elp", "--lambda", "0.5", "--out", "m"]);
    ok(d, &["predict", "--model-file", "m/model.json", "--table", "t/test.csv", "--out", "p"]);

    let model = load_model(d.join("m/model.json")).unwrap();
    assert_eq!(model.feature_names, ["ttd", "tthm", "elp"]);
    assert_eq!(model.training.lambda, Some(0.5));
    let rows = load_table(d.join("t/test.csv")).unwrap();
    let mut rd = csv::Reader::from_path(d.join("p/predictions.csv")).unwrap();
    let preds: Vec<csv::StringRecord> = rd.records().map(Result::unwrap).collect();
    assert_eq!(preds.len(), rows.len());
    for (row, rec) in rows.iter().zip(&preds) {
        let f = &row.features;
        let p = model.predict_proba(&[f.ttd, f.tthm, f.elp]).unwrap();
        assert_eq!(&rec[0], row.source_id);
        assert_eq!(rec[2].parse::<f64>().unwrap(), p);
        assert!((0.0..=1.0).contains(&p));
        assert_eq!(&rec[3], if p >= 0.5 { "1" } else { "0" });
    }

    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("m/train_report.json")).unwrap()).unwrap();
    assert!(report["train"]["metrics"]["accuracy"].as_f64().unwrap() > 0.9);
}

#[test]
fn eval_writes_every_table() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_scene(d);
    ok(d, &["extract", "--raster", "scene/chm.asc", "--polygons", "split/train.geojson", "split/validation.geojson", "split/test.geojson", "--out", "t"]);
    ok(d, &["eval", "--train", "t/train.csv", "--valid", "t/validation.csv", "--test", "t/test.csv", "--model", "tree", "--max-depth", "3", "--out", "e"]);
    let read = |n: &str| std::fs::read_to_string(d.join("e").join(n)).unwrap();
    assert_eq!(read("thresholds.csv").lines().count(), 9);
    assert_eq!(read("confidence_bins.csv").lines().count(), 6);
    assert_eq!(read("area_percentiles.csv").lines().count(), 11);
    assert_eq!(read("feature_subsets.csv").lines().count(), 5);
    assert!(read("test_metrics.csv").starts_with("model,accuracy"));
    let manifest = read("manifest.txt");
    for n in ["thresholds.csv", "area_percentiles.csv", "feature_subsets.csv", "confidence_bins.csv", "test_metrics.csv"] {
        assert!(manifest.contains(&format!("output: {n} sha256=")), "{n}");
    }
    assert!(manifest.contains("max_depth = 3"));
}
