use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_hybridsde"));
    c.env("RUST_LOG", "warn");
    c
}

fn model_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models/bm_oracle.json")
}

/// Writes a small config next to the shipped oracle model and returns its path.
fn config(dir: &Path, extra: &str) -> PathBuf {
    let text = format!(
        r#"{{"model": {:?}, "grid": {{"m": 10, "cells_per_band": 5}},
            "mc": {{"n_paths": 2000, "dt": 0.002, "seed": 11}}{extra}}}"#,
        model_path()
    );
    let p = dir.join("run.json");
    std::fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str], cfg: &Path, out: &Path) -> i32 {
    bin()
        .args(args)
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
        .status
        .code()
        .unwrap()
}

#[test]
fn shipped_configs_validate() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let out = tempfile::tempdir().unwrap();
    for name in ["example_5_1.json", "example_5_2.json", "bm_oracle.json"] {
        assert_eq!(run(&["validate"], &root.join(name), out.path()), 0, "{name}");
    }
    assert!(out.path().join("validation.json").exists());
    assert!(out.path().join("approximation.csv").exists());
}

#[test]
fn missing_config_is_io_error() {
    let out = tempfile::tempdir().unwrap();
    assert_eq!(run(&["validate"], Path::new("/nonexistent/run.json"), out.path()), 1);
}

#[test]
fn malformed_json_is_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(&p, "{ not json").unwrap();
    assert_eq!(run(&["solve"], &p, dir.path()), 1);
}

#[test]
fn generator_violation_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("run.json");
    std::fs::write(
        &p,
        r#"{"model": {"states": 2, "mu": [[0.0],[0.0]], "sigma": [[1.0],[1.0]],
            "lambda": [[[-1.0],[1.0]], [[-2.0],[2.0]]], "a": 1.0, "u": 0.5, "i0": 1}}"#,
    )
    .unwrap();
    assert_eq!(run(&["validate"], &p, dir.path()), 2);
    assert_eq!(run(&["solve"], &p, dir.path()), 2);
}

#[test]
fn zero_paths_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "");
    let text = std::fs::read_to_string(&cfg).unwrap().replace("2000", "0");
    std::fs::write(&cfg, text).unwrap();
    assert_eq!(run(&["mc"], &cfg, dir.path()), 2);
}

#[test]
fn empty_sweep_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), r#", "study": {"m_list": []}"#);
    assert_eq!(run(&["study", "--kind", "grid"], &cfg, dir.path()), 2);
}

#[test]
fn unknown_subcommand_exits_2() {
    assert_eq!(bin().arg("frobnicate").output().unwrap().status.code(), Some(2));
}

#[test]
fn solve_writes_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "");
    assert_eq!(run(&["solve", "--dump-chain"], &cfg, dir.path()), 0);
    let results = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert!(results.starts_with("j,m_minus,m_plus\n"));
    for f in ["occupation.csv", "run_log.json", "chain_nodes.csv", "chain_generator.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run(&["mc", "--workers", "1"], &cfg, &a), 0);
    assert_eq!(run(&["mc", "--workers", "3"], &cfg, &b), 0);
    let fa = std::fs::read(a.join("estimates.csv")).unwrap();
    assert_eq!(fa, std::fs::read(b.join("estimates.csv")).unwrap());

    let c = dir.path().join("c");
    assert_eq!(
        bin()
            .args(["mc", "--seed", "12", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&c)
            .output()
            .unwrap()
            .status
            .code(),
        Some(0)
    );
    assert_ne!(fa, std::fs::read(c.join("estimates.csv")).unwrap());

    for d in [&a, &b] {
        assert_eq!(run(&["study", "--kind", "grid"], &cfg, d), 0);
    }
    assert_eq!(
        std::fs::read(a.join("grid_study.csv")).unwrap(),
        std::fs::read(b.join("grid_study.csv")).unwrap()
    );
}

#[test]
fn compare_on_oracle_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "");
    assert_eq!(run(&["compare"], &cfg, dir.path()), 0);
    let text = std::fs::read_to_string(dir.path().join("compare.csv")).unwrap();
    assert!(text.lines().skip(1).all(|l| l.ends_with(",true")), "{text}");
}
