use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn curvlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_curvlab")).args(args).output().expect("binary runs")
}

fn run_config(dir: &Path, name: &str, json: &str) -> Output {
    let path = dir.join(format!("{name}.json"));
    fs::write(&path, json).unwrap();
    let out = dir.join(name);
    curvlab(&["run", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()])
}

#[test]
fn registry_list_and_dump() {
    let out = curvlab(&["registry", "list"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in curvlab::registry::NAMES {
        assert!(text.contains(name));
    }
    let out = curvlab(&["registry", "dump", "three-chain"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["name"], "three-chain");
    assert_eq!(curvlab(&["registry", "dump", "nope"]).status.code(), Some(2));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(run_config(d, "pass", r#"{"space":"two-state","suite":"eulerian"}"#).status.code(), Some(0));
    assert_eq!(run_config(d, "fail", r#"{"space":"three-chain","suite":"eulerian"}"#).status.code(), Some(1));
    assert_eq!(run_config(d, "malformed", "{").status.code(), Some(2));
    assert_eq!(run_config(d, "unknown", r#"{"space":"nope","suite":"eulerian"}"#).status.code(), Some(2));
    assert_eq!(
        run_config(d, "tol", r#"{"space":"two-state","suite":"eulerian","tolerances":{"GE_2":-1}}"#).status.code(),
        Some(2)
    );
    assert_eq!(run_config(d, "seed", r#"{"space":"two-state","suite":"all"}"#).status.code(), Some(2));
    let cap = r#"{"space":"ou-variable","nodes":9,"suite":"coupling","seed":1,"params":{"force_path_lp":true}}"#;
    assert_eq!(run_config(d, "cap", cap).status.code(), Some(3));
}

#[test]
fn run_writes_reports_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"space":"two-state","suite":"eulerian"}"#).unwrap();
    let out = dir.path().join("o");
    let status = curvlab(&[
        "run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--suite", "coupling", "--seed", "4",
    ])
    .status;
    assert!(status.code().is_some());
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["suite"], "coupling");
    assert_eq!(report["seed"], 4);
    let conditions: Vec<&str> = report["reports"].as_array().unwrap().iter().map(|r| r["condition"].as_str().unwrap()).collect();
    assert!(conditions.contains(&"PTE_2") && conditions.contains(&"PCP") && conditions.contains(&"feynman_kac"));
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), conditions.len() + 1);
    assert!(out.join("pte_curve_p2.csv").exists() && out.join("pcp_ratio_histogram.csv").exists());
    assert!(!out.join("report.tmp").exists());
}

#[test]
fn same_seed_same_report() {
    let dir = tempfile::tempdir().unwrap();
    let json = r#"{"space":"three-chain","suite":"all","seed":9}"#;
    run_config(dir.path(), "a", json);
    run_config(dir.path(), "b", json);
    let a = fs::read(dir.path().join("a/report.json")).unwrap();
    let b = fs::read(dir.path().join("b/report.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn ou_const_equivalence_fails_only_on_pathwise_coupling() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_config(dir.path(), "eq", r#"{"space":"ou-constK","suite":"equivalence","seed":42}"#);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("eq/report.json")).unwrap()).unwrap();
    let reports = report["reports"].as_array().unwrap();
    for c in ["BE_2", "GE_2", "CD", "EVI", "PTE_2", "PCP", "kuwada_agreement"] {
        assert!(reports.iter().any(|r| r["condition"] == c), "{c} missing");
    }
    let failing: Vec<&str> =
        reports.iter().filter(|r| r["pass"] == false).map(|r| r["condition"].as_str().unwrap()).collect();
    assert_eq!(failing, ["PCP"]);
    assert_eq!(out.status.code(), Some(1));
}
