//! End-to-end checks of the `hjb-homog` binary: exit codes, error keys,
//! and byte-identical output across runs.

use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_hjb-homog");

const EIKONAL: &str = r#"
[problem]
dim = 1
hamiltonian = "eikonal"

[problem.potential]
kind = "periodic"
constant = 2.0
terms = [{ freq = 1.0, amp = 1.0 }]

[cell]
cells = 32
lambda_min = 1e-2
"#;

fn write_config(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let out = dir.join("out");
    let text = format!("{body}\n[output]\ndir = {:?}\n", out.to_str().unwrap());
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn error_of(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.trim()).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {text}"))
}

#[test]
fn nonpositive_lambda_exits_1_with_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", EIKONAL);
    let out = run(&["cell", cfg.to_str().unwrap(), "--lambda-min", "0"]);
    assert_eq!(out.status.code(), Some(1));
    let e = error_of(&out);
    assert_eq!(e["error"], "config");
    assert_eq!(e["key"], "cell.lambda_min");
    assert_eq!(e["exit_code"], 1);
}

#[test]
fn unknown_key_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &format!("{EIKONAL}\nlambda_mni = 0.1\n"));
    let out = run(&["cell", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let e = error_of(&out);
    assert!(e["message"].as_str().unwrap().contains("lambda_mni"), "{e}");
}

#[test]
fn missing_section_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", EIKONAL);
    let out = run(&["table", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_of(&out)["key"], "table");
}

#[test]
fn resonance_detects_rational_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"
[problem]
dim = 1
hamiltonian = "eikonal"

[problem.potential]
kind = "periodic"
constant = 2.0
terms = [{ scale = 0, freq = 1.0, amp = 0.5 }, { scale = 1, freq = 1.0, amp = 0.5 }]

[problem.scales]
gamma = [[1], ["1/2"]]
"#;
    let cfg = write_config(dir.path(), "c.toml", body);
    let out = run(&["resonance", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["resonant"], true);

    let irrational = write_config(dir.path(), "d.toml", &body.replace("\"1/2\"", "\"sqrt(2)\""));
    let out = run(&["resonance", irrational.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["resonant"], false);
}

#[test]
fn cell_matches_known_value_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", EIKONAL);
    let a = run(&["cell", cfg.to_str().unwrap()]);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    let w1 = std::fs::read(dir.path().join("out/cell_w.csv")).unwrap();
    let b = run(&["cell", cfg.to_str().unwrap()]);
    let w2 = std::fs::read(dir.path().join("out/cell_w.csv")).unwrap();
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(w1, w2);
    let v: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    // H̄(0) = −min V = −1.
    assert!((v["hbar"].as_f64().unwrap() + 1.0).abs() < 5e-2, "{v}");
}

#[test]
fn table_writes_csv_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("{EIKONAL}\n[table]\nlo = [-2.0]\nhi = [2.0]\ncounts = [5]\n");
    let cfg = write_config(dir.path(), "c.toml", &body);
    let out = run(&["table", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("out/table.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
    let side: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/table.json")).unwrap()).unwrap();
    assert_eq!(side["properties"]["pass"], true);
}

#[test]
fn verify_single_criterion_report_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let r1 = dir.path().join("r1.json");
    let r2 = dir.path().join("r2.json");
    let a = run(&["verify", "--criteria", "1", "--report", r1.to_str().unwrap()]);
    let b = run(&["verify", "--criteria", "1", "--report", r2.to_str().unwrap()]);
    assert_eq!(a.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&a.stdout).starts_with("PASS criterion  1"));
    assert_eq!(std::fs::read(&r1).unwrap(), std::fs::read(&r2).unwrap());
    assert_eq!(b.status.code(), Some(0));
}
