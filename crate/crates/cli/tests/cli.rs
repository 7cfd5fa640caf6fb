//! End-to-end runs of the binary: exit codes, artifacts and determinism.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"{
  "model": {"d_f": 8, "d_h": 8, "d_n": 8, "d_l0": 8, "d_e0": 8, "d_e": 8, "d_s": 8, "d_p": 4},
  "generator": {"num_scenes": 60},
  "training": {"epochs": 2, "batch_size": 8},
  "vocab_min_count": 0
}"#;

fn cmrin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cmrin")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _tmp: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    data: PathBuf,
}

fn fixture() -> Fixture {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().to_path_buf();
    let config = root.join("tiny.json");
    fs::write(&config, TINY).unwrap();
    let data = root.join("data");
    let out = cmrin(&["gen-data", "--config", s(&config), "--out", s(&data)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    Fixture {
        _tmp: tmp,
        root,
        config,
        data,
    }
}

fn train(f: &Fixture, run_dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--config", s(&f.config), "--data-dir", s(&f.data), "--run-dir", s(run_dir)];
    args.extend_from_slice(extra);
    cmrin(&args)
}

#[test]
fn gen_data_writes_three_splits_and_manifest() {
    let f = fixture();
    for name in ["train.jsonl", "val.jsonl", "test.jsonl", "manifest.json"] {
        assert!(f.data.join(name).exists(), "{name}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(f.data.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["counts"], serde_json::json!([40, 10, 10]));
}

#[test]
fn bad_split_fails_without_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, r#"{"generator": {"split": [0.5, 0.5, 0.5]}}"#).unwrap();
    let out_dir = tmp.path().join("out");
    let out = cmrin(&["gen-data", "--config", s(&cfg), "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("split"));
    assert!(!out_dir.exists());
}

#[test]
fn unknown_flag_values_are_usage_errors() {
    assert_eq!(cmrin(&["train", "--branch", "sideways"]).status.code(), Some(2));
    assert_eq!(cmrin(&["train", "--mining", "lucky"]).status.code(), Some(2));
    assert_eq!(cmrin(&["gradcheck", "--inject-fault", "nope"]).status.code(), Some(2));
    assert_eq!(cmrin(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("typo.json");
    fs::write(&cfg, r#"{"modle": {}}"#).unwrap();
    let out = cmrin(&["gen-data", "--config", s(&cfg), "--out", s(&tmp.path().join("d"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("modle"));
}

#[test]
fn train_eval_ground_inspect() {
    let f = fixture();
    let run = f.root.join("run");
    let out = train(&f, &run, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["config.json", "metrics.jsonl", "checkpoint.json", "checkpoint_last.json", "manifest.json"] {
        assert!(run.join(name).exists(), "{name}");
    }
    let metrics = fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
    let manifest: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(manifest["config"]["model"]["d_h"] == 8);

    let ckpt = run.join("checkpoint.json");
    let out = cmrin(&["eval", "--checkpoint", s(&ckpt), "--dataset", s(&f.data.join("test.jsonl"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let overall = report["overall"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&overall));
    assert!(report["by_order"].is_object());

    let scene = f.root.join("scene.json");
    let first = fs::read_to_string(f.data.join("test.jsonl")).unwrap();
    let sample: serde_json::Value = serde_json::from_str(first.lines().nth(1).unwrap()).unwrap();
    fs::write(&scene, serde_json::json!({"proposals": sample["proposals"]}).to_string()).unwrap();
    let ppm = f.root.join("heat.ppm");
    let out = cmrin(&[
        "ground",
        "--checkpoint",
        s(&ckpt),
        "--scene",
        s(&scene),
        "--expression",
        "the red circle",
        "--tree",
        "(NP (DT the) (JJ red) (NN circle))",
        "--ppm",
        s(&ppm),
        "--ppm-size",
        "32x16",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let g: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let ranking = g["ranking"].as_array().unwrap();
    assert_eq!(ranking.len(), sample["proposals"].as_array().unwrap().len());
    let scores: Vec<f64> = ranking.iter().map(|r| r["score"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    assert_eq!(g["predicted"], ranking[0]["index"]);
    assert!(fs::read(&ppm).unwrap().starts_with(b"P6\n32 16\n255\n"));

    let out = cmrin(&["inspect", "--checkpoint", s(&ckpt), "--dataset", s(&f.data.join("val.jsonl")), "--index", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let i: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let tokens = i["tokens"].as_array().unwrap().len();
    assert_eq!(i["details"]["type_weights"].as_array().unwrap().len(), tokens);
    assert_eq!(i["details"]["word_attention"].as_array().unwrap().len(), tokens);

    let out = cmrin(&["inspect", "--checkpoint", s(&ckpt), "--dataset", s(&f.data.join("val.jsonl")), "--index", "99"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn same_seed_gives_identical_artifacts() {
    let f = fixture();
    let (a, b) = (f.root.join("a"), f.root.join("b"));
    assert!(train(&f, &a, &["--seed", "3"]).status.success());
    assert!(train(&f, &b, &["--seed", "3"]).status.success());
    for name in ["metrics.jsonl", "checkpoint.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn timestamped_run_dirs_do_not_collide() {
    let f = fixture();
    let runs = f.root.join("runs");
    for _ in 0..2 {
        let out = cmrin(&[
            "train", "--config", s(&f.config), "--data-dir", s(&f.data), "--runs-dir", s(&runs), "--epochs", "1",
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let dirs: Vec<_> = fs::read_dir(&runs).unwrap().collect();
    assert_eq!(dirs.len(), 2);
}

#[test]
fn feature_width_mismatch_is_reported() {
    let f = fixture();
    let run = f.root.join("run");
    assert!(train(&f, &run, &["--epochs", "1"]).status.success());
    let text = fs::read_to_string(f.data.join("test.jsonl")).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[0] = lines[0].replace("\"d_x\":32", "\"d_x\":16");
    let wide = f.root.join("wide.jsonl");
    fs::write(&wide, lines.join("\n")).unwrap();
    let out = cmrin(&["eval", "--checkpoint", s(&run.join("checkpoint.json")), "--dataset", s(&wide)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("d_x"));
}

#[test]
fn truncated_dataset_names_the_line() {
    let f = fixture();
    let run = f.root.join("run");
    assert!(train(&f, &run, &["--epochs", "1"]).status.success());
    let text = fs::read_to_string(f.data.join("test.jsonl")).unwrap();
    let cut = &text[..text.len() - 40];
    let bad = f.root.join("cut.jsonl");
    fs::write(&bad, cut).unwrap();
    let lines = cut.lines().count();
    let out = cmrin(&["eval", "--checkpoint", s(&run.join("checkpoint.json")), "--dataset", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains(&format!("line {lines}")));
}

#[test]
fn gradcheck_passes_and_names_injected_fault() {
    let out = cmrin(&["gradcheck"]);
    assert!(out.status.success());
    let r: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["passed"], true);
    assert!(!r["groups"].as_array().unwrap().is_empty());

    let out = cmrin(&["gradcheck", "--inject-fault", "softmax"]);
    assert_eq!(out.status.code(), Some(1));
    let r: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["failing_ops"], serde_json::json!(["softmax"]));
}
