use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn vista(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vista"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn vista")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = vista(dir, args);
    assert!(
        out.status.success(),
        "vista {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn ok_json(dir: &Path, args: &[&str]) -> Value {
    serde_json::from_slice(&ok(dir, args).stdout).expect("stdout is JSON")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn synth(dir: &Path) {
    ok_json(dir, &["synth", "--output-dir", "corpus", "--videos", "6", "--frames", "1200", "--seed", "11"]);
}

#[test]
fn staged_commands_chain_together() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);

    let trained = ok_json(dir, &["train-heads", "--manifest", "corpus/manifest.json", "--output-dir", "trained"]);
    assert_eq!(trained["heads"].as_array().unwrap().len(), 10);
    for h in trained["heads"].as_array().unwrap() {
        assert!(h["final_loss"].as_f64().unwrap() < h["initial_loss"].as_f64().unwrap());
        assert!(h["val_frame_map"].as_f64().is_some());
    }

    ok(dir, &["calibrate", "--manifest", "trained/manifest.json", "--out", "fusion.json"]);
    let fusion = read_json(&dir.join("fusion.json"));
    assert_eq!(fusion["backbones"].as_array().unwrap().len(), 2);
    assert!(fusion["temperature"].as_f64().unwrap() > 0.0);

    let fused = ok_json(dir, &["fuse", "--manifest", "trained/manifest.json", "--profile", "fusion.json", "--output-dir", "fused"]);
    assert_eq!(fused["videos"], 6);

    let thr = ok_json(dir, &["search-thresholds", "--manifest", "fused/manifest.json", "--mode", "local+global"]);
    assert!(thr["objective_value"].as_f64().unwrap() >= thr["initial_objective"].as_f64().unwrap());
    std::fs::write(dir.join("thr.json"), thr.to_string()).unwrap();

    let out = ok(dir, &["decode", "--manifest", "fused/manifest.json", "--thresholds", "thr.json", "--split", "test", "--out", "events.json"]);
    assert!(out.stdout.is_empty());
    let events = read_json(&dir.join("events.json"));
    assert!(!events.as_array().unwrap().is_empty());

    let report = ok_json(
        dir,
        &["evaluate", "--predictions", "events.json", "--ground-truth", "corpus/ground_truth.json", "--taxonomy", "corpus/taxonomy.json", "--iou", "0.5,0.95"],
    );
    let per = report["per_threshold"].as_array().unwrap();
    assert_eq!(per.len(), 2);
    for r in per {
        let m = r["map"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&m));
    }
}

#[test]
fn search_with_global_candidates_is_not_worse() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);
    ok(dir, &["calibrate", "--manifest", "corpus/manifest.json", "--head-weighting", "uniform", "--out", "fusion.json"]);
    let search = |mode: &str| {
        ok_json(dir, &["search-thresholds", "--manifest", "corpus/manifest.json", "--profile", "fusion.json", "--mode", mode])
    };
    let local = search("local");
    let global = search("local+global");
    assert_eq!(local["init"], global["init"]);
    assert!(global["objective_value"].as_f64().unwrap() >= local["objective_value"].as_f64().unwrap() - 1e-12);

    let out = vista(dir, &["search-thresholds", "--manifest", "corpus/manifest.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("[fuse]"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("synth.json"), r#"{"params": {"videos": 3, "frames": 800, "seed": 5}, "output_dir": "from_config"}"#).unwrap();
    let report = ok_json(dir, &["synth", "--config", "synth.json", "--videos", "4"]);
    assert_eq!(report["videos"], 4);
    assert_eq!(report["frames"], 800);
    assert!(dir.join("from_config/manifest.json").is_file());
}

#[test]
fn failures_exit_nonzero_with_stage_tag() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    let out = vista(dir, &["decode", "--manifest", "missing.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("[load]"));

    std::fs::write(dir.join("bad.json"), r#"{"no_such_field": 1}"#).unwrap();
    let out = vista(dir, &["run-pipeline", "--config", "bad.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("[config]"));

    let out = vista(dir, &["search-thresholds", "--mode", "exhaustive"]);
    assert!(!out.status.success());

    let out = vista(dir, &["train-heads"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--manifest"));
}

#[test]
fn run_pipeline_writes_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);
    let report = ok_json(
        dir,
        &["run-pipeline", "--manifest", "corpus/manifest.json", "--precomputed-heads", "--no-ablation", "--output-dir", "out", "--mode", "local"],
    );
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["thresholds"]["mode"], "local");
    assert!(report["ablation"].as_array().is_none_or(|a| a.is_empty()));
    assert_eq!(read_json(&dir.join("out/report.json")), report);
}
