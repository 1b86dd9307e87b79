use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use riskctmc::instances::{random_irreducible, RandomSpec};
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_riskctmc"))
}

fn desk() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models/desk.json")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn document(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is one JSON document")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn validate_reports_diagnostics() {
    let out = run(&["validate", path_str(&desk())]);
    assert_eq!(out.status.code(), Some(0));
    let doc = document(&out);
    assert_eq!(doc["command"], "validate");
    assert_eq!(doc["result"]["n"], 2);
    assert_eq!(doc["result"]["diagnostics"]["rate_bound"], 2.0);
    assert_eq!(doc["result"]["diagnostics"]["irreducible_all"], true);
    assert!(doc["config"]["argv"].as_array().unwrap().len() == 3);
}

#[test]
fn policy_iteration_matches_enumeration_through_cli() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..5u64 {
        let path = dir.path().join(format!("m{seed}.json"));
        std::fs::write(
            &path,
            random_irreducible(seed, RandomSpec::default()).to_json(),
        )
        .unwrap();
        let pi = document(&run(&["solve-average", path_str(&path), "--theta", "0.3"]));
        let bf = document(&run(&["brute-force", path_str(&path), "--theta", "0.3"]));
        let (a, b) = (
            pi["result"]["rho_star"].as_f64().unwrap(),
            bf["result"]["rho_star"].as_f64().unwrap(),
        );
        assert!((a - b).abs() <= 1e-8, "seed {seed}: {a} vs {b}");
    }
}

#[test]
fn finite_crosscheck_passes_on_desk_model() {
    let model = desk();
    let out = run(&[
        "crosscheck",
        "finite",
        path_str(&model),
        "--theta",
        "0.5",
        "-T",
        "2",
        "-N",
        "100000",
        "--seed",
        "7",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let doc = document(&out);
    assert_eq!(doc["result"]["pass"], true);
    assert_eq!(doc["result"]["checks"].as_array().unwrap().len(), 2);
    assert_eq!(doc["config"]["command"]["seed"], 7);
}

#[test]
fn failed_crosscheck_still_writes_document() {
    let out = run(&[
        "crosscheck",
        "finite",
        path_str(&desk()),
        "-N",
        "1000",
        "--se-multiple",
        "0.0001",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(document(&out)["result"]["pass"], false);
}

#[test]
fn exit_codes_follow_failure_class() {
    assert_eq!(run(&["solve-finite"]).status.code(), Some(64));
    assert_eq!(
        run(&["solve-finite", path_str(&desk()), "--bogus"])
            .status
            .code(),
        Some(64)
    );
    assert_eq!(run(&[]).status.code(), Some(64));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(
        run(&["validate", "/nonexistent/model.json"]).status.code(),
        Some(1)
    );
    assert_eq!(
        run(&["solve-average", path_str(&desk()), "--theta", "1.5"])
            .status
            .code(),
        Some(1)
    );

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("reducible.json");
    std::fs::write(
        &path,
        r#"{"n": 2, "actions": [["a"], ["stay", "back"]],
            "rates": [{"a": [null, 1.0]}, {"stay": [0.0, null], "back": [1.0, null]}],
            "cost": [{"a": 1.0}, {"stay": 0.5, "back": 2.0}]}"#,
    )
    .unwrap();
    let out = run(&["solve-average", path_str(&path), "--initial", "a,stay"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("reducible"));
}

#[test]
fn output_is_deterministic_in_seed() {
    let model = desk();
    let args = [
        "estimate",
        "growth",
        path_str(&model),
        "-N",
        "5000",
        "-T",
        "5",
        "--seed",
        "4",
    ];
    let a = run(&args);
    let b = run(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let mut other = args;
    other[8] = "5";
    let c = document(&run(&other));
    assert_ne!(
        document(&a)["result"]["estimate"]["mean"],
        c["result"]["estimate"]["mean"]
    );
}

#[test]
fn output_flag_writes_file() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("out.json");
    let out = run(&[
        "simulate",
        path_str(&desk()),
        "--policy",
        "b,a",
        "--output",
        path_str(&target),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&target).unwrap()).unwrap();
    assert_eq!(doc["result"]["states"][0], 0);
    assert_eq!(doc["result"]["end_time"], 10.0);
    assert_eq!(doc["result"]["actions"][0], "b");
}
