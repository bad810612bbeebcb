//! The `duet` binary: exit codes, run directories and the file pipeline.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn duet(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_duet"))
        .args(args)
        .current_dir(cwd)
        .env_remove("DUET_RUN_ROOT")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn fast_pipeline() -> Value {
    json!({ "warmup_epochs": 2, "total_epochs": 3, "epoch_all": 2, "mc_samples": 8 })
}

/// Runs `synth` then `noise` and returns the noisy manifest path.
fn noisy_manifest(tmp: &Path, rate: f64) -> PathBuf {
    let synth = write_config(
        tmp,
        "synth.json",
        &json!({ "synth": { "n_per_class": [300, 60], "dim": 4, "separation": 2.0, "seed": 3 } }),
    );
    let out = duet(&["synth", "-c", synth.to_str().unwrap(), "--run-dir", "s"], tmp);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let noise = write_config(
        tmp,
        "noise.json",
        &json!({ "noise": { "kind": "symmetric", "rate": rate, "seed": 4 } }),
    );
    let out = duet(
        &[
            "noise",
            "-c",
            noise.to_str().unwrap(),
            "-i",
            "s/manifest.jsonl",
            "--run-dir",
            "n",
        ],
        tmp,
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    tmp.join("n/manifest.jsonl")
}

#[test]
fn usage_errors_exit_2() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&duet(&[], tmp.path())), 2);
    assert_eq!(code(&duet(&["frobnicate"], tmp.path())), 2);
    let out = duet(&["uod", "-i", "missing.jsonl"], tmp.path());
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.starts_with("error code=E_USAGE exit=2 message="), "{err}");
    assert_eq!(err.lines().count(), 1);
    assert_eq!(code(&duet(&["uod", "-c", "nope.json"], tmp.path())), 2);
}

#[test]
fn malformed_manifest_exits_3() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("bad.jsonl"), "{\"kind\":\"header\"}\nnot json\n").unwrap();
    let out = duet(&["uod", "-i", "bad.jsonl", "--run-dir", "r"], tmp.path());
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn invalid_config_exits_5() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("broken.json"), "{ seed: ").unwrap();
    assert_eq!(
        code(&duet(&["synth", "-c", "broken.json", "--run-dir", "a"], tmp.path())),
        5
    );
    let unknown = write_config(tmp.path(), "unknown.json", &json!({ "sed": 1 }));
    assert_eq!(
        code(&duet(
            &["synth", "-c", unknown.to_str().unwrap(), "--run-dir", "b"],
            tmp.path()
        )),
        5
    );
    // a command whose config section is missing
    assert_eq!(code(&duet(&["synth", "--run-dir", "c"], tmp.path())), 5);
    let manifest = noisy_manifest(tmp.path(), 0.2);
    let bad = write_config(tmp.path(), "bad.json", &json!({ "pipeline": { "mc_samples": 1 } }));
    let out = duet(
        &[
            "uod",
            "-c",
            bad.to_str().unwrap(),
            "-i",
            manifest.to_str().unwrap(),
            "--run-dir",
            "d",
        ],
        tmp.path(),
    );
    assert_eq!(code(&out), 5, "{}", stderr(&out));
}

#[test]
fn empty_clean_set_exits_5() {
    let tmp = TempDir::new().unwrap();
    let manifest = noisy_manifest(tmp.path(), 0.2);
    let mut pipeline = fast_pipeline();
    pipeline["refresh"] = json!("never");
    let cfg = write_config(tmp.path(), "train.json", &json!({ "pipeline": pipeline }));
    let out = duet(
        &[
            "train",
            "-c",
            cfg.to_str().unwrap(),
            "-i",
            manifest.to_str().unwrap(),
            "--run-dir",
            "t",
        ],
        tmp.path(),
    );
    assert_eq!(code(&out), 5, "{}", stderr(&out));
    assert!(stderr(&out).contains("clean set is empty"));
}

#[test]
fn diverging_training_exits_4() {
    let tmp = TempDir::new().unwrap();
    let manifest = noisy_manifest(tmp.path(), 0.2);
    let mut pipeline = fast_pipeline();
    pipeline["lr"] = json!(1e300);
    let cfg = write_config(tmp.path(), "train.json", &json!({ "pipeline": pipeline }));
    let out = duet(
        &[
            "train",
            "-c",
            cfg.to_str().unwrap(),
            "-i",
            manifest.to_str().unwrap(),
            "--run-dir",
            "t",
        ],
        tmp.path(),
    );
    assert_eq!(code(&out), 4, "{}", stderr(&out));
}

#[test]
fn held_lock_exits_3_and_is_released_after_a_run() {
    let tmp = TempDir::new().unwrap();
    let synth = write_config(
        tmp.path(),
        "synth.json",
        &json!({ "synth": { "n_per_class": [5, 5], "dim": 2, "separation": 2.0, "seed": 1 } }),
    );
    let args = ["synth", "-c", synth.to_str().unwrap(), "--run-dir", "r"];
    assert_eq!(code(&duet(&args, tmp.path())), 0);
    assert!(!tmp.path().join("r/.lock").exists());
    fs::write(tmp.path().join("r/.lock"), "12345\n").unwrap();
    let out = duet(&args, tmp.path());
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("exit=3"));
}

#[test]
fn run_root_variable_sets_default_directory() {
    let tmp = TempDir::new().unwrap();
    let synth = write_config(
        tmp.path(),
        "synth.json",
        &json!({ "synth": { "n_per_class": [5, 5], "dim": 2, "separation": 2.0, "seed": 1 } }),
    );
    let out = Command::new(env!("CARGO_BIN_EXE_duet"))
        .args(["synth", "-c", synth.to_str().unwrap()])
        .current_dir(tmp.path())
        .env("DUET_RUN_ROOT", "elsewhere")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert!(tmp.path().join("elsewhere/synth/manifest.jsonl").is_file());
    assert!(tmp.path().join("elsewhere/synth/config.json").is_file());
}

#[test]
fn unanimous_six_rater_panel_has_fleiss_one() {
    let tmp = TempDir::new().unwrap();
    let annotators: Vec<Value> = (0..6)
        .map(|i| {
            json!({
                "annotator_id": format!("r{i}"),
                "confusion": [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
                "coverage": 1.0
            })
        })
        .collect();
    let cfg = write_config(
        tmp.path(),
        "cfg.json",
        &json!({
            "synth": { "n_per_class": [10, 10, 10], "dim": 3, "separation": 2.0, "seed": 2 },
            "panel": { "annotators": annotators, "seed": 7 }
        }),
    );
    let c = cfg.to_str().unwrap();
    assert_eq!(code(&duet(&["synth", "-c", c, "--run-dir", "s"], tmp.path())), 0);
    assert_eq!(
        code(&duet(
            &["panel", "-c", c, "-i", "s/manifest.jsonl", "--run-dir", "p"],
            tmp.path()
        )),
        0
    );
    let out = duet(
        &["agree", "-c", c, "-i", "p/manifest.jsonl", "--run-dir", "a"],
        tmp.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("fleiss_kappa=1"), "{}", stdout(&out));
    let report = fs::read_to_string(tmp.path().join("a/agreement.jsonl")).unwrap();
    let panel: Value = report
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap())
        .find(|r| r["kind"] == "panel")
        .unwrap();
    assert_eq!(panel["raters"], 6);
    assert_eq!(panel["fleiss_kappa"], 1.0);
}

#[test]
fn training_twice_gives_identical_logs_and_checkpoints() {
    let tmp = TempDir::new().unwrap();
    let manifest = noisy_manifest(tmp.path(), 0.2);
    let cfg = write_config(
        tmp.path(),
        "train.json",
        &json!({ "seed": 5, "pipeline": fast_pipeline() }),
    );
    for dir in ["t1", "t2"] {
        let out = duet(
            &[
                "train",
                "-c",
                cfg.to_str().unwrap(),
                "-i",
                manifest.to_str().unwrap(),
                "--run-dir",
                dir,
            ],
            tmp.path(),
        );
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    for file in [
        "metrics.jsonl",
        "best.json",
        "last.json",
        "weights.jsonl",
        "selection.jsonl",
    ] {
        let a = fs::read(tmp.path().join("t1").join(file)).unwrap();
        let b = fs::read(tmp.path().join("t2").join(file)).unwrap();
        assert_eq!(a, b, "{file}");
    }
    // the snapshot alone reproduces the run in its own directory
    let snapshot = tmp.path().join("t1/config.json");
    let copy = tmp.path().join("snapshot.json");
    fs::copy(&snapshot, &copy).unwrap();
    let before = fs::read(tmp.path().join("t1/metrics.jsonl")).unwrap();
    let out = duet(&["train", "-c", copy.to_str().unwrap()], tmp.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(fs::read(tmp.path().join("t1/metrics.jsonl")).unwrap(), before);
}

#[test]
fn end_to_end_writes_best_and_last_rows() {
    let tmp = TempDir::new().unwrap();
    let synth = write_config(
        tmp.path(),
        "test.json",
        &json!({ "synth": { "n_per_class": [200, 40], "dim": 4, "separation": 2.0, "seed": 99, "id_prefix": "g" } }),
    );
    assert_eq!(
        code(&duet(
            &["synth", "-c", synth.to_str().unwrap(), "--run-dir", "gold"],
            tmp.path()
        )),
        0
    );
    let manifest = noisy_manifest(tmp.path(), 0.4);
    let before = fs::read(&manifest).unwrap();
    let cfg = write_config(tmp.path(), "train.json", &json!({ "pipeline": fast_pipeline() }));
    let c = cfg.to_str().unwrap();
    let m = manifest.to_str().unwrap();
    let out = duet(
        &[
            "train",
            "-c",
            c,
            "-i",
            m,
            "--test",
            "gold/manifest.jsonl",
            "--run-dir",
            "t",
        ],
        tmp.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("test_macro_f1:B="), "{}", stdout(&out));

    let out = duet(
        &[
            "eval",
            "--checkpoint",
            "t/last.json",
            "--test",
            "gold/manifest.jsonl",
            "--run-dir",
            "e",
        ],
        tmp.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let eval: Value =
        serde_json::from_str(fs::read_to_string(tmp.path().join("e/eval.jsonl")).unwrap().trim()).unwrap();
    assert!(eval["macro_f1"].as_f64().unwrap() > 0.0);

    let out = duet(
        &["report", "--metrics", "t/metrics.jsonl", "--run-dir", "r"],
        tmp.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary = fs::read_to_string(tmp.path().join("r/summary.jsonl")).unwrap();
    let rows: Vec<Value> = summary.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let f1 = rows.iter().find(|r| r["metric"] == "test_macro_f1").unwrap();
    assert!(f1["best"].as_f64().unwrap() >= f1["last"].as_f64().unwrap());
    let plot = fs::read_to_string(tmp.path().join("r/plot.csv")).unwrap();
    assert_eq!(plot.lines().count(), 1 + 2 + 3);
    assert_eq!(
        fs::read_to_string(tmp.path().join("r/summary.jsonl")).unwrap(),
        fs::read_to_string(tmp.path().join("t/summary.jsonl")).unwrap()
    );

    // the stagewise commands read the same manifest without touching it
    let out = duet(&["warmup", "-c", c, "-i", m, "--run-dir", "w"], tmp.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = duet(
        &[
            "uosl",
            "-c",
            c,
            "-i",
            m,
            "--checkpoint",
            "w/warmup.json",
            "--run-dir",
            "u",
        ],
        tmp.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(
        fs::read_to_string(tmp.path().join("u/uosl.jsonl"))
            .unwrap()
            .lines()
            .count(),
        360
    );
    assert_eq!(fs::read(&manifest).unwrap(), before);
}

#[test]
fn outputs_never_overwrite_inputs() {
    let tmp = TempDir::new().unwrap();
    let manifest = noisy_manifest(tmp.path(), 0.2);
    let before = fs::read(&manifest).unwrap();
    let noise = tmp.path().join("noise.json");
    let out = duet(
        &[
            "noise",
            "-c",
            noise.to_str().unwrap(),
            "-i",
            "n/manifest.jsonl",
            "--run-dir",
            "n",
        ],
        tmp.path(),
    );
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert_eq!(fs::read(&manifest).unwrap(), before);
}
