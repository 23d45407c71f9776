//! End-to-end checks of the `mildkit` binary: exit codes, report schemas,
//! config precedence, and deterministic output.

use std::fs;
use std::path::PathBuf;
use std::process::Command;

use serde_json::Value;

fn run(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_mildkit"))
        .args(args)
        .output()
        .expect("spawn mildkit");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn run_json(args: &[&str]) -> (i32, Value) {
    let (code, stdout, stderr) = run(args);
    let value = serde_json::from_str(&stdout)
        .unwrap_or_else(|e| panic!("stdout is not JSON ({e}); stderr: {stderr}"));
    (code, value)
}

fn scratch_file(name: &str, contents: &str) -> PathBuf {
    let path = std::env::temp_dir().join(format!("mildkit-cli-{}-{name}", std::process::id()));
    fs::write(&path, contents).expect("write scratch file");
    path
}

#[test]
fn certify_accepts_the_default_certificate() {
    let (code, report) = run_json(&[
        "certify", "--alpha", "1", "--nmax", "12", "--grid", "48", "--prec", "192",
    ]);
    assert_eq!(code, 0);
    assert_eq!(report["pass"], Value::Bool(true));
    let orders = report["orders"].as_array().expect("orders array");
    assert_eq!(orders.len(), 13);
    for row in orders {
        let margin = row["margin"].as_str().expect("margin string");
        assert!(!margin.starts_with('-'), "negative margin: {margin}");
    }
    assert!(report.get("timestamp").is_some());
}

#[test]
fn certify_rejects_a_false_certificate_with_exit_1() {
    let (code, report) = run_json(&[
        "certify", "--alpha", "1", "--nmax", "4", "--grid", "32", "--prec", "160",
        "--cert", "A=1,B=1,C=0",
    ]);
    assert_eq!(code, 1);
    assert_eq!(report["pass"], Value::Bool(false));
}

#[test]
fn decimal_rationals_are_a_usage_error() {
    let (code, _, stderr) = run(&["certify", "--alpha", "0.5", "--nmax", "2"]);
    assert_eq!(code, 2);
    assert!(stderr.contains("p/q"), "stderr: {stderr}");
}

#[test]
fn malformed_certificate_is_a_usage_error() {
    let (code, _, _) = run(&["certify", "--alpha", "1", "--cert", "A=1,B=1"]);
    assert_eq!(code, 2);
    let (code, _, _) = run(&["certify", "--alpha", "1", "--cert", "A=1,B=1,C=0,D=2"]);
    assert_eq!(code, 2);
}

#[test]
fn check_lemmas_passes_for_fractional_alpha() {
    let (code, report) = run_json(&["check-lemmas", "--alpha", "1/2", "--kmax", "30"]);
    assert_eq!(code, 0);
    assert_eq!(report["pass"], Value::Bool(true));
    assert_eq!(report["umild"]["rows"].as_array().unwrap().len(), 30);
    assert_eq!(report["expmild"].as_array().unwrap().len(), 16);
}

#[test]
fn gf_check_single_tuple_agrees() {
    let (code, report) = run_json(&[
        "gf-check", "--af", "1/2", "--bf", "2", "--ag", "1", "--bg", "1", "--nmax", "10",
    ]);
    assert_eq!(code, 0);
    assert_eq!(report["all_equal"], Value::Bool(true));
    assert_eq!(report["rows"].as_array().unwrap().len(), 10);
}

#[test]
fn gf_check_requires_all_four_rates() {
    let (code, _, stderr) = run(&["gf-check", "--af", "1/2"]);
    assert_eq!(code, 2);
    assert!(stderr.contains("all of"), "stderr: {stderr}");
}

#[test]
fn derive_emits_the_interchange_object() {
    let (code, poly) = run_json(&["derive", "--alpha", "1", "--order", "3"]);
    assert_eq!(code, 0);
    assert_eq!(poly["arity"], Value::from(1));
    assert_eq!(poly["alpha"], Value::from("1"));
    assert_eq!(poly["terms"].as_array().unwrap().len(), 3);
    assert!(poly.get("timestamp").is_none());
}

#[test]
fn derive_dumps_chain_rule_enumerations() {
    let (code, dump) = run_json(&["derive", "--faa", "--nu", "2,1", "--lambda", "2"]);
    assert_eq!(code, 0);
    assert_eq!(dump["nu"], serde_json::json!([2, 1]));
    let tuples = dump["tuples"].as_array().expect("tuples");
    assert!(!tuples.is_empty());
    for t in tuples {
        assert!(t["s"].as_u64().is_some());
        assert!(t["coeff"].as_str().is_some());
    }
}

#[test]
fn parametrize_reports_coverage_per_epsilon() {
    let (code, report) = run_json(&[
        "parametrize", "--alpha", "1", "--epsilon", "1/4", "--nmax", "4", "--grid", "32",
        "--prec", "160", "--samples", "64",
    ]);
    assert_eq!(code, 0);
    let charts = report["charts"].as_array().expect("charts");
    assert_eq!(charts.len(), 3);
    assert_eq!(charts[0]["id"], Value::from("main"));
    assert_eq!(report["coverage"]["pass"], Value::Bool(true));
    assert_eq!(report["epsilon"], Value::from("1/4"));
}

#[test]
fn parametrize_csv_covers_every_chart_component() {
    let (code, stdout, _) = run(&[
        "parametrize", "--alpha", "1", "--epsilon", "1/4,1/16", "--nmax", "3", "--grid", "24",
        "--prec", "160", "--csv",
    ]);
    assert_eq!(code, 0);
    let mut lines = stdout.lines();
    assert_eq!(
        lines.next(),
        Some("alpha,epsilon,chart_id,component,n,sup,bound,margin")
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    // 2 epsilons x 3 charts x 2 components x orders 0..=3.
    assert_eq!(rows.len(), 2 * 3 * 2 * 4);
    for id in ["main", "swapped", "point"] {
        assert!(rows.iter().any(|r| r[2] == id), "missing chart {id}");
    }
}

#[test]
fn probe_meets_the_blowup_threshold() {
    let (code, report) = run_json(&[
        "probe-nonuniform", "--epsilon", "1/16", "--nmax", "24", "--grid", "32", "--prec", "192",
    ]);
    assert_eq!(code, 0);
    assert_eq!(report["pass"], Value::Bool(true));
    let rows = report["rows"].as_array().expect("rows");
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["meets_half_over_eps"], Value::Bool(true));
}

#[test]
fn bench_validates_kernel_counts() {
    let (code, report) = run_json(&[
        "bench", "--pmax", "20", "--nu-order", "6", "--diff-order", "10",
    ]);
    assert_eq!(code, 0);
    assert_eq!(report["pass"], Value::Bool(true));
    let rows = report["rows"].as_array().expect("rows");
    assert_eq!(rows.len(), 3);
    // p(20) = 627.
    assert_eq!(rows[0]["count"], Value::from(627));
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let path = scratch_file("cfg.ini", "nmax=3\ngrid=24\nprec=160\n# comment\n");
    let path_str = path.to_str().unwrap();
    let (code, report) = run_json(&["certify", "--alpha", "1", "--config", path_str]);
    assert_eq!(code, 0);
    assert_eq!(report["orders"].as_array().unwrap().len(), 4);
    let (code, report) =
        run_json(&["certify", "--alpha", "1", "--config", path_str, "--nmax", "5"]);
    assert_eq!(code, 0);
    assert_eq!(report["orders"].as_array().unwrap().len(), 6);
    fs::remove_file(path).ok();
}

#[test]
fn unknown_config_keys_are_rejected() {
    let path = scratch_file("bad.ini", "bogus=1\n");
    let (code, _, stderr) = run(&["certify", "--config", path.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(stderr.contains("bogus"), "stderr: {stderr}");
    fs::remove_file(path).ok();
}

#[test]
fn deterministic_runs_are_byte_identical() {
    let args = [
        "parametrize", "--alpha", "1", "--epsilon", "1/4", "--nmax", "3", "--grid", "24",
        "--prec", "160", "--samples", "32", "--deterministic",
    ];
    let (code_a, first, _) = run(&args);
    let (code_b, second, _) = run(&args);
    assert_eq!(code_a, 0);
    assert_eq!(code_b, 0);
    assert_eq!(first, second);
    let report: Value = serde_json::from_str(&first).unwrap();
    assert!(report.get("timestamp").is_none());
}

#[test]
fn output_flag_writes_the_report_to_a_file() {
    let path = std::env::temp_dir().join(format!("mildkit-cli-{}-out.json", std::process::id()));
    let (code, stdout, _) = run(&[
        "certify", "--alpha", "1", "--nmax", "2", "--grid", "16", "--prec", "128",
        "--output", path.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    assert!(stdout.is_empty());
    let report: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(report["pass"], Value::Bool(true));
    fs::remove_file(path).ok();
}

#[test]
fn csv_format_is_rejected_where_it_has_no_meaning() {
    let (code, _, stderr) = run(&["check-lemmas", "--alpha", "1", "--format", "csv"]);
    assert_eq!(code, 2);
    assert!(stderr.contains("CSV"), "stderr: {stderr}");
}
