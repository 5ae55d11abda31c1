use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use paul::checkpoint;
use paul::kpt;
use paul_core::networks::ModelParams;
use paul_core::rng::seeded;
use paul_core::trainer::TrainConfig;

fn paul(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_paul"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_synth_spec(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("synth.json");
    fs::write(
        &path,
        r#"{"points": 6, "frames": 20, "true-code-dim": 1, "occlusion-rate": 0.2, "seed": 4}"#,
    )
    .unwrap();
    path
}

fn write_train_config(dir: &Path, steps: usize, extra: &str) -> std::path::PathBuf {
    let path = dir.join("train.json");
    fs::write(
        &path,
        format!(
            r#"{{"steps": {steps}, "batch-size": 8, "bottleneck": 2, "hidden": [8, 6], "checkpoint-interval": 2{extra}}}"#
        ),
    )
    .unwrap();
    path
}

#[test]
fn missing_config_exits_2_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let o = paul(&["synth", "--config", p(&missing), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.json"), "{}", stderr(&o));
}

#[test]
fn bad_arguments_exit_2() {
    assert_eq!(paul(&["train"]).status.code(), Some(2));
    assert_eq!(paul(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(paul(&["gradcheck", "--threads", "0"]).status.code(), Some(2));
    assert_eq!(paul(&["--help"]).status.code(), Some(0));
}

#[test]
fn unknown_config_keys_and_bad_data_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"stepz": 3}"#).unwrap();
    let data = dir.path().join("d.kpt");
    fs::write(&data, "KPT 1 1 3\n1 2 3 4 5 6\n1 1 1\n").unwrap();
    let o = paul(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    fs::write(&data, "KPT 1 1 3\n1 2 3 4 5 6\n1 1 2\n").unwrap();
    let o = paul(&["train", "--data", p(&data), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn unwritable_output_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("occupied");
    fs::write(&file, "x").unwrap();
    let o = paul(&["synth", "--out", p(&file.join("sub"))]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn diverging_training_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_synth_spec(dir.path());
    assert!(paul(&["synth", "--config", p(&spec), "--out", p(dir.path())])
        .status
        .success());
    let cfg = write_train_config(dir.path(), 50, r#", "learning-rate": 1e300"#);
    let data = dir.path().join("dataset.kpt");
    let o = paul(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn zero_steps_writes_the_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_synth_spec(dir.path());
    assert!(paul(&["synth", "--config", p(&spec), "--out", p(dir.path())])
        .status
        .success());
    let cfg = write_train_config(dir.path(), 0, "");
    let data = dir.path().join("dataset.kpt");
    let o = paul(&[
        "train",
        "--config",
        p(&cfg),
        "--data",
        p(&data),
        "--out",
        p(dir.path()),
        "--seed",
        "11",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let ck = checkpoint::load(&dir.path().join("ckpt-final.paulckpt")).unwrap();
    let resolved: TrainConfig =
        serde_json::from_str(&fs::read_to_string(dir.path().join("config.resolved.json")).unwrap()).unwrap();
    assert_eq!(resolved.seed, 11);
    assert_eq!(ck.config, resolved);
    let ds = kpt::read_path(&data).unwrap();
    let fresh = ModelParams::init(resolved.model_spec(ds.points(), ds.len()), &mut seeded(resolved.seed)).unwrap();
    assert_eq!(ck.params, fresh);
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let spec = write_synth_spec(out);
    let before = fs::read(&spec).unwrap();
    assert!(paul(&["synth", "--config", p(&spec), "--out", p(out)]).status.success());
    assert_eq!(fs::read(&spec).unwrap(), before);

    let cfg = write_train_config(out, 5, "");
    let data = out.join("dataset.kpt");
    let data_before = fs::read(&data).unwrap();
    let o = paul(&[
        "train",
        "--config",
        p(&cfg),
        "--data",
        p(&data),
        "--out",
        p(out),
        "--mode",
        "adl",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(&data).unwrap(), data_before);
    for name in [
        "ckpt-000002.paulckpt",
        "ckpt-000004.paulckpt",
        "ckpt-final.paulckpt",
        "train.log.jsonl",
    ] {
        assert!(out.join(name).exists(), "{name}");
    }
    let log = fs::read_to_string(out.join("train.log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 5);
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.get("loss").is_some());
    }

    let ckpt = out.join("ckpt-final.paulckpt");
    for cmd in ["eval", "infer", "export-latent"] {
        let o = paul(&[cmd, "--data", p(&data), "--ckpt", p(&ckpt), "--out", p(out)]);
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("eval.report.json")).unwrap()).unwrap();
    assert!(report["mean-ne"].as_f64().unwrap().is_finite());

    let preds = kpt::read_path(&out.join("predictions.kpt")).unwrap();
    assert_eq!(preds.len(), 20);
    assert_eq!(preds.ground_truth().unwrap().len(), 20);

    let csv = fs::read_to_string(out.join("latents.csv")).unwrap();
    let rows = paul::latents::read_csv(&csv).unwrap();
    assert_eq!(rows.len(), 20);
    let ck = checkpoint::load(&ckpt).unwrap();
    let codes = ck.params.codes().unwrap();
    for (id, code) in &rows {
        assert_eq!(code.as_slice(), codes.row(*id));
    }
}

#[test]
fn eval_without_ground_truth_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let data = out.join("d.kpt");
    fs::write(&data, "KPT 1 1 3\n1 2 3 4 5 6\n1 1 1\n").unwrap();
    let cfg = out.join("t.json");
    fs::write(&cfg, r#"{"steps": 0, "bottleneck": 1, "hidden": [4]}"#).unwrap();
    let o = paul(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = paul(&[
        "eval",
        "--data",
        p(&data),
        "--ckpt",
        p(&out.join("ckpt-final.paulckpt")),
        "--out",
        p(out),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn gradcheck_reports_the_worst_error() {
    let o = paul(&["gradcheck", "--seeds", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("max relative error"));
}
