use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_covpack"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn covpack")
}

fn jsonl(out: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&out.stdout).lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn num(v: &Value, key: &str) -> f64 {
    v[key].as_f64().unwrap_or_else(|| panic!("{key} missing in {v}"))
}

#[test]
fn vertex_cover_runs_stay_within_two() {
    let out = run(&[
        "run", "--algo", "wvc", "--gen", "wvc", "--gen-args", "n=256", "p=0.05", "--seeds", "0..50", "--format", "jsonl",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = jsonl(&out);
    assert_eq!(rows.len(), 50);
    for r in &rows {
        assert_eq!(r["feasible"], true);
        assert_eq!(r["terminated"], true);
        assert!(num(r, "ratio") <= 2.0 + 1e-9, "{r}");
    }
}

#[test]
fn worked_example_cover() {
    let path = fixture("worked_example.json");
    let out = run(&["run", "--algo", "seq-cover", "--instance", path.to_str().unwrap(), "--format", "jsonl"]);
    assert!(out.status.success());
    let rows = jsonl(&out);
    assert_eq!(rows[0]["x"], serde_json::json!([4.0, 1.0]));
    assert_eq!(num(&rows[0], "cost_x"), 5.0);
}

#[test]
fn heavy_path_packing() {
    let path = fixture("path_heavy.json");
    let out = run(&["run", "--algo", "pack2", "--instance", path.to_str().unwrap(), "--seeds", "1", "--format", "jsonl"]);
    assert!(out.status.success());
    let r = &jsonl(&out)[0];
    assert_eq!(num(r, "value_y"), 5.0);
    assert_eq!(num(r, "ratio"), 2.0);
}

#[test]
fn output_directory_is_reproducible() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let out = run(&[
            "run", "--algo", "cmip2", "--gen", "cmip2", "--gen-args", "n=20", "m=30", "--seeds", "0..5", "--out",
            d.path().to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for file in ["runs.csv", "traces.jsonl"] {
        let a = std::fs::read(dirs[0].path().join(file)).unwrap();
        let b = std::fs::read(dirs[1].path().join(file)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{file} differs");
    }
}

#[test]
fn incompatible_algorithm_is_an_error() {
    let path = fixture("path_heavy.json");
    let out = run(&["run", "--algo", "wvc", "--instance", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
}

#[test]
fn timeouts_exit_with_one() {
    let out = run(&[
        "run", "--algo", "wvc", "--gen", "wvc", "--gen-args", "n=64", "p=0.2", "--seeds", "0..3", "--max-rounds", "1",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let csv = String::from_utf8_lossy(&out.stdout);
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn generated_instance_reads_back() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("inst.json");
    let out = run(&["gen", "--gen", "cmip", "--gen-args", "n=10", "m=12", "--seed", "3", "--out", file.to_str().unwrap()]);
    assert!(out.status.success());
    let out = run(&["run", "--algo", "seq-cover", "--instance", file.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
