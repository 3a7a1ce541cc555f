use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn suites() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../suites")
}

fn cia(args: &[&str], dir: &std::path::Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cia"))
        .args(args)
        .current_dir(dir)
        .env_remove("CIA_LLM_API_KEY")
        .env_remove("CIA_LLM_BASE_URL")
        .env_remove("CIA_LLM_MODEL")
        .output()
        .unwrap()
}

fn json_out(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

#[test]
fn assessment_prints_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = cia(&["--json", "cia", "--case", "ieee118", "--bus", "14", "--mw", "3.9", "--type", "load"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json_out(&o);
    assert_eq!(v["decision"], "approve");
    assert_eq!(v["connection"]["bus"], 14);
    assert!(v["stages"].as_array().unwrap().len() >= 1);

    let o = cia(&["cia", "--case", "ieee118", "--bus", "14", "--mw", "3.9", "--type", "load"], dir.path());
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("approve"));
}

#[test]
fn mitigation_flag_is_applied() {
    let dir = tempfile::tempdir().unwrap();
    let o = cia(
        &["--json", "cia", "--case", "ieee14", "--bus", "14", "--mw", "20", "--type", "load", "--mitigate", "14:20"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json_out(&o);
    assert_eq!(v["mitigations_applied"][0]["bus"], 14);
}

#[test]
fn capacity_search_stays_within_budget() {
    let dir = tempfile::tempdir().unwrap();
    let o = cia(&["--json", "capacity", "--case", "ieee118", "--bus", "14", "--type", "load"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json_out(&o);
    assert!(v["iterations"].as_u64().unwrap() <= 9, "{v}");
    let mw = v["max_approved_mw"].as_f64().unwrap();
    assert!(mw > 0.0 && mw < 500.0);
}

#[test]
fn benchmark_replays_a_script() {
    let dir = tempfile::tempdir().unwrap();
    let suite = suites().join("benchmark50.json");
    let script = suites().join("benchmark50.oracle.json");
    let out = dir.path().join("runs");
    let o = cia(
        &[
            "--json",
            "bench",
            "--suite",
            suite.to_str().unwrap(),
            "--scripted",
            script.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json_out(&o);
    assert_eq!(v["metrics"]["scenarios"], 50);
    assert_eq!(v["metrics"]["passed"], 50);
    assert!(PathBuf::from(v["artifact"].as_str().unwrap()).starts_with(&out));
}

#[test]
fn errors_exit_nonzero_with_a_json_body() {
    let dir = tempfile::tempdir().unwrap();
    let o = cia(&["--json", "cia", "--case", "ieee14", "--bus", "999", "--mw", "5", "--type", "load"], dir.path());
    assert!(!o.status.success());
    let v = json_out(&o);
    assert_eq!(v["error"]["code"], "execution_error");
    assert!(v["error"]["message"].as_str().unwrap().contains("999"));

    let o = cia(&["--json", "bench", "--suite", "no-such-suite"], dir.path());
    assert!(!o.status.success());
    assert_eq!(json_out(&o)["error"]["code"], "error");

    let o = cia(&["capacity", "--case", "ieee14", "--bus", "9", "--type", "load", "--min-mw", "50", "--max-mw", "10"], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}
