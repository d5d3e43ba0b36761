use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn problem(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../problems").join(name)
}

fn mpfide(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mpfide")).args(args).output().unwrap()
}

fn report(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).unwrap()
}

fn solve(name: &str, extra: &[&str]) -> Output {
    let path = problem(name);
    let mut args = vec!["solve", "--config", path.to_str().unwrap()];
    args.extend_from_slice(extra);
    mpfide(&args)
}

fn check(name: &str, extra: &[&str]) -> Output {
    let path = problem(name);
    let mut args = vec!["check", "--config", path.to_str().unwrap()];
    args.extend_from_slice(extra);
    mpfide(&args)
}

#[test]
fn worked_table_is_the_identity() {
    let out = solve("worked.toml", &[]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,x_1"));
    let mut rows = 0;
    for line in lines {
        let (t, x) = line.split_once(',').unwrap();
        let (t, x): (f64, f64) = (t.parse().unwrap(), x.parse().unwrap());
        assert!((t - x).abs() < 1e-12, "{line}");
        rows += 1;
    }
    assert_eq!(rows, 65);
}

#[test]
fn json_table_and_report_files() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("x.json");
    let rep = dir.path().join("r.json");
    let out = solve(
        "rotation.toml",
        &["--format", "json", "--out", table.to_str().unwrap(), "--report", rep.to_str().unwrap()],
    );
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty() && out.stderr.is_empty());
    let table: Value = serde_json::from_str(&std::fs::read_to_string(table).unwrap()).unwrap();
    assert_eq!(table["n"], 2);
    assert_eq!(table["columns"], serde_json::json!(["t", "x_1", "x_2"]));
    let rep: Value = serde_json::from_str(&std::fs::read_to_string(rep).unwrap()).unwrap();
    assert_eq!(rep["status"], "ok");
    assert!(rep["residuals"]["boundary"].as_f64().unwrap() < 1e-10);
}

#[test]
fn check_reports_the_tables() {
    let out = check("worked.toml", &[]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let rep = report(&out);
    assert!((rep["regularity"]["G"][0][0].as_f64().unwrap() - 0.5).abs() < 1e-12);
    assert!((rep["regularity"]["M"][0][0].as_f64().unwrap() - 2.0).abs() < 1e-12);
    assert!((rep["wellposedness"]["N"].as_f64().unwrap() - 9.0).abs() < 1e-9);
    assert_eq!(rep["wellposedness"]["qstar_certified"], true);
}

#[test]
fn zero_kernel_has_zero_g() {
    let rep = report(&check("zero_kernel.toml", &[]));
    assert_eq!(rep["regularity"]["G"][0][0].as_f64(), Some(0.0));
    assert_eq!(rep["regularity"]["regular"], true);
}

#[test]
fn singular_interval_is_refined() {
    let rep = report(&solve("singular_g.toml", &[]));
    assert_eq!(rep["regularity"]["refinements"], 1);
    let out = solve("singular_g.toml", &["--max-refine", "0"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(report(&out)["error"]["code"], "NOT_REGULAR");
}

#[test]
fn failure_exit_codes() {
    for (name, code, reason) in [
        ("zero_boundary.toml", 4, "NOT_WELL_POSED"),
        ("oscillating.toml", 5, "CONTRACTION_FAILED"),
        ("malformed.toml", 2, "PARSE_ERROR"),
    ] {
        let out = solve(name, &[]);
        assert_eq!(out.status.code(), Some(code), "{name}");
        assert!(out.stdout.is_empty(), "{name}");
        assert_eq!(report(&out)["error"]["code"], reason, "{name}");
    }
    assert_eq!(check("zero_boundary.toml", &[]).status.code(), Some(4));
}

#[test]
fn parse_errors_point_at_the_field() {
    let rep = report(&solve("malformed.toml", &[]));
    assert_eq!(rep["error"]["field"], "f.entries[0]");
    assert_eq!(rep["error"]["offset"], 2);
}

#[test]
fn general_kernel_reports_iteration() {
    let rep = report(&solve("exponential.toml", &[]));
    assert_eq!(rep["status"], "ok");
    let q = rep["iteration"]["q_estimate"].as_f64().unwrap();
    assert!(q > 0.0 && q < 1.0);
    assert_eq!(rep["iteration"]["converged"], true);
}

#[test]
fn missing_config_is_an_io_error() {
    let out = mpfide(&["solve", "--config", "/nonexistent/problem.toml"]);
    assert_eq!(out.status.code(), Some(1));
}
