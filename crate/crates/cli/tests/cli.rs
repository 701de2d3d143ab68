use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pdmm(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pdmm"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn csv_files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    names.sort();
    names
}

const TWO_NODE_QUADRATIC: &str = r#"{
  "graph": {"n": 2, "edges": [[0, 1]]},
  "objectives": [
    {"kind": "quadratic", "Q": [[1.0]], "q": [1.0]},
    {"kind": "quadratic", "Q": [[1.0]], "q": [3.0]}
  ],
  "constraints": {"consensus": 1}
}"#;

#[test]
fn pnorm_writes_one_trace_per_p_and_a_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = pdmm(&["pnorm", "--n", "10", "--seed", "7", "--iters", "180", "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("o");
    let csvs = csv_files(&dir);
    assert_eq!(csvs.len(), 8);
    for name in &csvs {
        let text = fs::read_to_string(dir.join(name)).unwrap();
        // header plus one row per iteration
        assert_eq!(text.lines().count(), 181, "{name}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["files"].as_array().unwrap().len(), 16);
}

#[test]
fn outputs_are_byte_identical_across_runs_and_thread_modes() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["pnorm", "--n", "8", "--seed", "3", "--iters", "40", "--p", "3,6"];
    for (dir, extra) in [("a", None), ("b", None), ("c", Some("--sequential"))] {
        let mut full: Vec<&str> = args.to_vec();
        full.extend(["--out", dir]);
        full.extend(extra);
        assert!(pdmm(&full, tmp.path()).status.success());
    }
    for name in csv_files(&tmp.path().join("a")) {
        let a = fs::read(tmp.path().join("a").join(&name)).unwrap();
        assert_eq!(a, fs::read(tmp.path().join("b").join(&name)).unwrap(), "{name}");
        assert_eq!(a, fs::read(tmp.path().join("c").join(&name)).unwrap(), "{name}");
    }
}

#[test]
fn quad_bound_reports_no_violations() {
    let tmp = tempfile::tempdir().unwrap();
    let out = pdmm(&["quad-bound", "--instances", "10", "--gamma", "0.9", "--out", "q"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["bound_violations"], 0);
    assert_eq!(summary["fejer_violations"], 0);
    assert_eq!(csv_files(&tmp.path().join("q")).len(), 10);
    assert!(tmp.path().join("q/report_0.json").exists());
}

#[test]
fn l1_compare_from_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("l1.json"), r#"{"kind": "l1_compare", "n_nodes": 6, "iterations": 300}"#).unwrap();
    let out = pdmm(&["l1", "--config", "l1.json", "--out", "l"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("l/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["n_nodes"], 6);
    assert_eq!(manifest["config"]["iterations"], 300);
    let plain = fs::read_to_string(tmp.path().join("l/trace_l1_plain.csv")).unwrap();
    assert_eq!(plain.lines().count(), 301);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = pdmm(&["pnorm", "--bogus"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(pdmm(&["frobnicate"], tmp.path()).status.code(), Some(2));
}

#[test]
fn bad_configs_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("wrong_kind.json"), r#"{"kind": "l1_compare"}"#).unwrap();
    fs::write(tmp.path().join("unknown_field.json"), r#"{"n_nodez": 3}"#).unwrap();
    assert_eq!(pdmm(&["pnorm", "--config", "wrong_kind.json"], tmp.path()).status.code(), Some(2));
    assert_eq!(pdmm(&["pnorm", "--config", "unknown_field.json"], tmp.path()).status.code(), Some(2));
    assert_eq!(pdmm(&["pnorm", "--config", "missing.json"], tmp.path()).status.code(), Some(2));
    assert_eq!(pdmm(&["quad-bound", "--gamma", "1.5"], tmp.path()).status.code(), Some(2));
    assert_eq!(pdmm(&["l1", "--alpha", "0"], tmp.path()).status.code(), Some(2));
}

#[test]
fn singular_problem_is_a_numerical_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let singular = TWO_NODE_QUADRATIC.replace("[[1.0]]", "[[0.0]]");
    fs::write(tmp.path().join("p.json"), singular).unwrap();
    let out = pdmm(&["analyze", "--problem", "p.json"], tmp.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn analyze_two_node_quadratic() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("p.json"), TWO_NODE_QUADRATIC).unwrap();
    let out = pdmm(&["analyze", "--problem", "p.json", "--out", "a"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    // consensus minimizer of ½x² − x + ½x² − 3x is x = 2
    let x: Vec<f64> = serde_json::from_value(report["x_star"].clone()).unwrap();
    assert!((x[0] - 2.0).abs() < 1e-12 && (x[1] - 2.0).abs() < 1e-12);
    assert!((report["spectral"]["rho_star"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!(tmp.path().join("a/report_analyze.json").exists());
}

#[test]
fn stepsize_agrees_across_nodes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = pdmm(&["stepsize", "--n", "12", "--seed", "5"], tmp.path());
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let rho: Vec<f64> = serde_json::from_value(report["rho_star"].clone()).unwrap();
    assert_eq!(rho.len(), 12);
    assert!(rho.iter().all(|&r| r == rho[0]));
    assert_eq!(report["rounds"], report["diameter"]);
    assert!(report["warning"].is_null());

    let short = pdmm(&["stepsize", "--n", "12", "--seed", "5", "--rounds", "0"], tmp.path());
    let report: serde_json::Value = serde_json::from_slice(&short.stdout).unwrap();
    assert!(report["warning"].is_string());
}
