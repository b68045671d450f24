use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY_HOPF: &str = r#"preset = "hopf"
[datagen]
grid = [-0.15, 0.25, 0.55]
train = [0.25]
[datagen.hopf]
n_t = 80
[training]
epochs = 3
[uq]
ensemble_size = 8
[adaptive]
budget = 2
retrain_epochs = 1
"#;

const SMALL_KS: &str = r#"[datagen]
grid = [1.0]
train = [1.0]
[datagen.ks]
n_t = 400
[vae]
hidden = [64]
[transformer]
blocks = 1
width = 32
ff_width = 64
[training]
epochs = 60
"#;

fn updrom(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_updrom"))
        .args(args)
        .env("UPDROM_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = updrom(args);
    assert!(
        out.status.success(),
        "updrom {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn code(args: &[&str]) -> i32 {
    updrom(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map(|rd| rd.map(|e| e.unwrap().path()).collect())
        .unwrap_or_default();
    v.sort();
    v
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

/// Generates and trains the tiny Hopf model under `dir/out`.
fn tiny_pipeline(dir: &Path) -> PathBuf {
    let cfg = write_config(dir, TINY_HOPF);
    let out = dir.join("out");
    ok(&["--config", s(&cfg), "--out", s(&out), "generate"]);
    ok(&["--out", s(&out), "train"]);
    out
}

#[test]
fn sweep_writes_one_file_per_value_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let read_all = |out: &Path| -> Vec<(PathBuf, Vec<u8>)> {
        files(&out.join("data"))
            .into_iter()
            .map(|p| (p.file_name().unwrap().into(), fs::read(&p).unwrap()))
            .collect()
    };
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        ok(&["--out", s(out), "generate", "--case", "ks", "--sweep", "nu=0.7,0.9,1.1"]);
    }
    let first = read_all(&a);
    let updr: Vec<_> = first
        .iter()
        .filter(|(p, _)| p.extension().is_some_and(|e| e == "updr"))
        .collect();
    assert_eq!(updr.len(), 3);
    assert_eq!(first, read_all(&b));
}

#[test]
fn empty_sweep_is_a_usage_error_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    assert_eq!(code(&["--out", s(&out), "generate", "--case", "ks", "--sweep", "nu="]), 2);
    assert!(!out.exists());
    assert_eq!(code(&["--out", s(&out), "generate", "--case", "ks", "--sweep", "mu=0.1"]), 2);
    assert!(!out.exists());
}

#[test]
fn report_on_empty_directory_is_missing_input() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&["report", "--dir", s(tmp.path())]), 3);
}

#[test]
fn missing_checkpoint_is_missing_input() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    assert_eq!(code(&["--out", s(&out), "infer"]), 3);
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[training]\nepoch = 3\n");
    let out = tmp.path().join("out");
    assert_eq!(code(&["--config", s(&cfg), "--out", s(&out), "generate"]), 4);
}

#[test]
fn invalid_thread_count_is_a_usage_error() {
    let out = Command::new(env!("CARGO_BIN_EXE_updrom"))
        .args(["report", "--dir", "."])
        .env("UPDROM_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn pipeline_runs_end_to_end_and_uq_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tiny_pipeline(tmp.path());
    ok(&["--out", s(&out), "infer"]);
    let metrics = fs::read_to_string(out.join("infer/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 4, "{metrics}");
    assert!(metrics.starts_with("mu,relative_mse_percent,crps_printed,crps_abs,scaled_mse_mean"));

    let uq_run = |sub: &str| -> Vec<(PathBuf, Vec<u8>)> {
        let dir = tmp.path().join(sub);
        ok(&[
            "--out", s(&dir), "--seed", "7", "uq", "--checkpoint",
            s(&out.join("train/checkpoint")), "--data", s(&out.join("data")), "--n", "64",
        ]);
        files(&dir.join("uq"))
            .into_iter()
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .map(|p| (p.file_name().unwrap().into(), fs::read(&p).unwrap()))
            .collect()
    };
    let a = uq_run("u1");
    assert!(a.iter().any(|(p, _)| p == Path::new("nu_xi.csv")));
    assert!(a.iter().any(|(p, _)| p == Path::new("ci_mu_0.25.csv")));
    assert_eq!(a, uq_run("u2"));

    ok(&["--out", s(&out), "uq"]);
    ok(&["--out", s(&out), "adapt"]);
    let history = fs::read_to_string(out.join("adapt/adaptive_history.json")).unwrap();
    assert!(history.contains("\"iteration\": 2"), "{history}");
    assert!(out.join("adapt/checkpoint/manifest.json").exists());

    ok(&["report", "--dir", s(&out), "--out", s(&out)]);
    let summary = fs::read_to_string(out.join("report/adaptive_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4, "{summary}");
    for name in ["ke_signals.csv", "metrics.csv", "nu_heatmap.csv"] {
        assert!(out.join("report").join(name).exists(), "{name}");
    }
    assert!(!summary.contains("inf"));
}

#[test]
fn data_for_another_case_is_a_schema_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tiny_pipeline(tmp.path());
    let ks = write_config(tmp.path(), "[training]\nepochs = 1\n");
    assert_eq!(code(&["--config", s(&ks), "--out", s(&out), "train"]), 4);
}

#[test]
fn windowed_ks_inference_meets_the_error_threshold() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL_KS);
    let out = tmp.path().join("out");
    ok(&["--config", s(&cfg), "--out", s(&out), "generate"]);
    ok(&["--out", s(&out), "train"]);
    ok(&["--out", s(&out), "infer", "--windows", "--param", "ks_nu=1"]);
    let metrics = fs::read_to_string(out.join("infer/metrics.csv")).unwrap();
    let row: Vec<f64> = metrics.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(row[0], 1.0);
    assert!(row[1] < 5.0, "relative MSE {}%", row[1]);
    let ke = fs::read_to_string(out.join("infer/ke_ks_nu_1.csv")).unwrap();
    assert!(ke.starts_with("step,time,predicted,truth"));
    assert!(ke.lines().count() > 100);
}
