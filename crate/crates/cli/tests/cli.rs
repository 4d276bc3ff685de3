use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use jerktrack::dataset::synth::{synth_generate, StrokeKind};
use jerktrack::dataset::{write_jsonl, NormalizedSequence, StrokeSequence};
use tempfile::TempDir;

fn jerktrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jerktrack")).args(args).env_remove("JERKTRACK_THREADS").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = jerktrack(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn line_strokes(dir: &Path, count: usize) -> PathBuf {
    let strokes: Vec<StrokeSequence> = (0..count as u64).map(|i| synth_generate(StrokeKind::Line, 0.0, i)).collect();
    let path = dir.join("lines.jsonl");
    write_jsonl(&strokes, fs::File::create(&path).unwrap()).unwrap();
    path
}

fn ramps(dir: &Path) -> PathBuf {
    let corpus: Vec<NormalizedSequence> = (0..4)
        .map(|i| NormalizedSequence {
            id: format!("ramp-{i}"),
            symbol: "-".into(),
            start_position: [0.0, 0.0],
            velocities: vec![[0.01 * (i + 1) as f64, -0.005]; 20],
        })
        .collect();
    let path = dir.join("ramps.jsonl");
    write_jsonl(&corpus, fs::File::create(&path).unwrap()).unwrap();
    path
}

fn csv_column(path: &Path, name: &str) -> Vec<f64> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let idx = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records().map(|rec| rec.unwrap()[idx].parse().unwrap()).collect()
}

fn checksum(stdout: &str) -> String {
    stdout.lines().find_map(|l| l.strip_prefix("checksum: ")).unwrap().to_string()
}

#[test]
fn ingest_counts_and_normalizes() {
    let dir = TempDir::new().unwrap();
    let input = line_strokes(dir.path(), 3);
    let output = dir.path().join("out/norm.jsonl");
    assert_eq!(ok(&["ingest", "--input", s(&input), "--output", s(&output)]).trim(), "3");
    let text = fs::read_to_string(&output).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().all(|l| l.contains("\"velocities\"")));
}

#[test]
fn ingest_empty_input() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("empty.jsonl");
    fs::write(&input, "").unwrap();
    let output = dir.path().join("norm.jsonl");
    assert_eq!(ok(&["ingest", "--input", s(&input), "--output", s(&output)]).trim(), "0");
    assert_eq!(fs::read_to_string(&output).unwrap(), "");
}

#[test]
fn malformed_line_is_cited() {
    let dir = TempDir::new().unwrap();
    let good = fs::read_to_string(line_strokes(dir.path(), 6)).unwrap();
    let input = dir.path().join("bad.jsonl");
    fs::write(&input, format!("{good}{{\"id\": \"x\", \"points\": oops}}\n")).unwrap();
    let out = jerktrack(&["ingest", "--input", s(&input), "--output", s(&dir.path().join("o.jsonl"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("line 7") && err.contains("bad.jsonl"), "{err}");
}

#[test]
fn unknown_kind_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let corpus = line_strokes(dir.path(), 2);
    let out = jerktrack(&["train", "--kind", "gru", "--corpus", s(&corpus), "--out-dir", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("gru"));
}

#[test]
fn lstm_training_writes_model_and_decreasing_losses() {
    let dir = TempDir::new().unwrap();
    let corpus = line_strokes(dir.path(), 16);
    let out_dir = dir.path().join("run");
    ok(&["train", "--kind", "lstm", "--corpus", s(&corpus), "--out-dir", s(&out_dir), "--epochs", "2", "--learning-rate", "0.01"]);
    assert!(out_dir.join("model.json").exists());
    let losses = csv_column(&out_dir.join("train_report.csv"), "loss");
    assert_eq!(losses.len(), 2);
    assert!(losses[1] < losses[0], "{losses:?}");
}

#[test]
fn same_seed_same_checksum() {
    let dir = TempDir::new().unwrap();
    let corpus = line_strokes(dir.path(), 8);
    let run = |name: &str, seed: &str| {
        let out_dir = dir.path().join(name);
        let stdout = ok(&["train", "--kind", "dybm-esn", "--corpus", s(&corpus), "--out-dir", s(&out_dir), "--epochs", "1", "--seed", seed]);
        (checksum(&stdout), fs::read(out_dir.join("model.json")).unwrap())
    };
    let a = run("a", "5");
    let b = run("b", "5");
    assert_eq!(a, b);
    let lstm = |name: &str| {
        checksum(&ok(&["train", "--kind", "lstm", "--corpus", s(&corpus), "--out-dir", s(&dir.path().join(name)), "--epochs", "1", "--seed", "9"]))
    };
    assert_eq!(lstm("c"), lstm("d"));
}

#[test]
fn divergence_exits_numerically_and_keeps_the_report() {
    let dir = TempDir::new().unwrap();
    let corpus = dir.path().join("huge.jsonl");
    let seq = NormalizedSequence { id: "h".into(), symbol: "h".into(), start_position: [0.0, 0.0], velocities: vec![[f64::MAX, f64::MAX]; 4] };
    write_jsonl(&[seq], fs::File::create(&corpus).unwrap()).unwrap();
    let out_dir = dir.path().join("run");
    let out = jerktrack(&["train", "--kind", "lstm", "--corpus", s(&corpus), "--out-dir", s(&out_dir), "--epochs", "2"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(fs::read_to_string(out_dir.join("train_report.csv")).unwrap().starts_with("epoch,loss,seconds"));
    assert!(!out_dir.join("model.json").exists());
}

#[test]
fn eval_on_ramps() {
    let dir = TempDir::new().unwrap();
    let corpus = ramps(dir.path());
    let out_dir = dir.path().join("eval");
    let table = ok(&["eval", "--corpus", s(&corpus), "--model", "zero-motion=builtin:zero-motion", "--out-dir", s(&out_dir)]);
    assert!(table.lines().nth(1).unwrap().starts_with("baseline"), "{table}");
    let mse = csv_column(&out_dir.join("summary.csv"), "mse");
    assert_eq!(mse[0], 0.0);
    assert!(mse[1] > 0.0);
    assert!(out_dir.join("per_sequence.csv").exists() && out_dir.join("by_symbol.csv").exists());
}

#[test]
fn eval_missing_model_fails() {
    let dir = TempDir::new().unwrap();
    let corpus = ramps(dir.path());
    let out = jerktrack(&["eval", "--corpus", s(&corpus), "--model", "lstm=/nonexistent/model.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("/nonexistent/model.json"));
}

#[test]
fn invalid_mode_is_a_usage_error() {
    let out = jerktrack(&["simulate", "--mode", "sideways"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("sideways"));
}

#[test]
fn switching_alpha_ramps_over_steps_30_to_40() {
    let dir = TempDir::new().unwrap();
    ok(&["simulate", "--mode", "switching", "--out-dir", s(dir.path())]);
    let alpha = csv_column(&dir.path().join("trace_switching.csv"), "alpha");
    assert!(alpha[..=30].iter().all(|&a| a == 0.0));
    for (k, a) in alpha.iter().enumerate().take(40).skip(31) {
        assert!((a - (k - 30) as f64 / 10.0).abs() < 1e-12, "step {k}: {a}");
    }
    assert!(alpha[40..].iter().all(|&a| a == 1.0));
}

#[test]
fn three_mode_run_orders_errors() {
    let dir = TempDir::new().unwrap();
    let arc = dir.path().join("arc.jsonl");
    write_jsonl(&[synth_generate(StrokeKind::Arc, 0.0, 3)], fs::File::create(&arc).unwrap()).unwrap();
    let out_dir = dir.path().join("sim");
    ok(&["simulate", "--sequence", s(&arc), "--mode", "all", "--out-dir", s(&out_dir)]);
    for m in ["feedback-only", "with-prediction", "perfect-prediction"] {
        assert!(out_dir.join(format!("trace_{m}.csv")).exists());
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["alpha_convention"], "feedforward weight");
    let mse = |i: usize| summary["modes"][i]["mse"].as_f64().unwrap();
    assert_eq!(summary["modes"][0]["mode"], "feedback-only");
    assert!(mse(2) < mse(1) && mse(1) < mse(0), "{summary}");
}

#[test]
fn simulate_is_repeatable() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["simulate", "--mode", "with-prediction", "--out-dir", s(&a)]);
    ok(&["simulate", "--mode", "with-prediction", "--out-dir", s(&b)]);
    let file = "trace_with-prediction.csv";
    assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap());
}

#[test]
fn flags_override_config_file() {
    let dir = TempDir::new().unwrap();
    line_strokes(dir.path(), 4);
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "seed = 1\nout_dir = \"out\"\n[corpus]\ntrain = \"lines.jsonl\"\n[model]\nkind = \"dybm\"\n[train]\nepochs = 1\n").unwrap();
    ok(&["--config", s(&cfg), "train"]);
    assert_eq!(csv_column(&dir.path().join("out/train_report.csv"), "loss").len(), 1);
    ok(&["--config", s(&cfg), "train", "--epochs", "3"]);
    assert_eq!(csv_column(&dir.path().join("out/train_report.csv"), "loss").len(), 3);
}

#[test]
fn config_problems_are_usage_errors() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[corpus]\ntrain = \"missing.jsonl\"\n").unwrap();
    assert_eq!(jerktrack(&["--config", s(&cfg), "train", "--kind", "lstm"]).status.code(), Some(1));
    fs::write(&cfg, "epochs = 3\n").unwrap();
    assert_eq!(jerktrack(&["--config", s(&cfg), "simulate"]).status.code(), Some(1));
    assert_eq!(jerktrack(&["train"]).status.code(), Some(1));
}

#[test]
fn thread_cap_must_be_positive() {
    let out = Command::new(env!("CARGO_BIN_EXE_jerktrack"))
        .args(["simulate", "--mode", "feedback-only"])
        .env("JERKTRACK_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = Command::new(env!("CARGO_BIN_EXE_jerktrack"))
        .args(["simulate", "--mode", "feedback-only"])
        .env("JERKTRACK_THREADS", "2")
        .output()
        .unwrap();
    assert!(out.status.success());
}
