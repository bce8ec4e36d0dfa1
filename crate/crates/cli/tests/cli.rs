use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn grobust(dir: &Path, args: &[&str], config: &str) -> Output {
    let path = dir.join("config.json");
    fs::write(&path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_grobust"))
        .args(args)
        .arg("--config")
        .arg(&path)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.lines().last().unwrap()).unwrap()
}

#[test]
fn both_solvers_against_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let out = grobust(dir.path(), &["solve", "--out", "nested/run"], r#"{"problem": "bsb-call"}"#);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("nested/run");
    for f in ["bsb-call_lattice.csv", "bsb-call_hjb.csv", "comparison.csv", "comparison.json", "summary.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let summary = read_json(&run.join("summary.json"));
    assert_eq!(summary["problem"], "bsb-call");
    assert_eq!(summary["n_x"], 200);
    assert!(summary["cfl_bound"].as_f64().unwrap() >= summary["dt"].as_f64().unwrap());
    let v = &summary["V_at_probe_points"][0];
    assert!((v["hjb"].as_f64().unwrap() - 0.382924922548026207).abs() < 2e-2);
    assert_eq!(summary["pass"], true);
    assert!(read_json(&run.join("timing.json"))["wall_time"].as_f64().unwrap() > 0.0);
}

#[test]
fn depth_three_tree_matches_brute_force() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{"problem": "recursive-g",
        "solver": {"method": "lattice", "tree_depth": 3, "n_u": 3},
        "validate": {"oracle": "brute-force", "probes": [[0, 0.8], [0, 1.0], [0, 1.4]]}}"#;
    let out = grobust(dir.path(), &["solve"], config);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_json(&dir.path().join("out/comparison.json"));
    for row in rows.as_array().unwrap() {
        assert!(row["diff_lattice_oracle"].as_f64().unwrap() <= 1e-10, "{row}");
    }
}

#[test]
fn invalid_fields_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    let out = grobust(dir.path(), &["solve"], r#"{"problem": "lq", "solver": {"n_x": 0, "n_q": 1}}"#);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["error"]["kind"], "config");
    let keys: Vec<&str> = err["error"]["keys"].as_array().unwrap().iter().map(|k| k.as_str().unwrap()).collect();
    assert_eq!(keys, ["solver.n_x", "solver.n_q"]);
}

#[test]
fn unknown_keys_rejected_unless_lenient() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{"problem": "bsb-call", "solver": {"method": "lattice", "n_x": 41, "nx": 10}}"#;
    let out = grobust(dir.path(), &["solve"], config);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_json(&out)["error"]["message"].as_str().unwrap().contains("solver.nx"));
    let out = grobust(dir.path(), &["solve", "--strict", "false"], config);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("solver.nx"));
}

#[test]
fn malformed_json_reports_location() {
    let dir = tempfile::tempdir().unwrap();
    let out = grobust(dir.path(), &["solve"], "{\"problem\": \"lq\",\n \"solver\": {\"n_x\": }}");
    assert_eq!(out.status.code(), Some(2));
    let msg = stderr_json(&out)["error"]["message"].as_str().unwrap().to_string();
    assert!(msg.contains("line 2"), "{msg}");
}

#[test]
fn solver_errors_are_structured() {
    let dir = tempfile::tempdir().unwrap();
    let out = grobust(dir.path(), &["solve"], r#"{"problem": "bsb-call", "solver": {"method": "hjb", "dt": 0.1}}"#);
    assert_eq!(out.status.code(), Some(3));
    let err = stderr_json(&out);
    assert_eq!(err["error"]["kind"], "solver");
    assert!(err["error"]["message"].as_str().unwrap().contains("monotonicity bound"));
}

#[test]
fn failed_tolerance_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{"problem": "bsb-call", "solver": {"method": "lattice", "n_x": 21, "K": 4},
        "validate": {"tolerances": {"oracle": 1e-6}}}"#;
    let out = grobust(dir.path(), &["solve"], config);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(read_json(&dir.path().join("out/summary.json"))["pass"], false);
}

fn artifacts(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_name() != "timing.json")
        .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap()))
        .collect()
}

#[test]
fn outputs_are_deterministic_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{"problem": "recursive-g", "solver": {"n_x": 81, "K": 40},
        "simulate": {"n_paths": 2000, "steps": 20, "seed": 7}}"#;
    let path = dir.path().join("config.json");
    fs::write(&path, config).unwrap();
    let mut seen = Vec::new();
    for (threads, sub) in [("1", "a"), ("4", "b"), ("0", "c")] {
        for cmd in ["solve", "simulate"] {
            let status = Command::new(env!("CARGO_BIN_EXE_grobust"))
                .args([cmd, "--config"])
                .arg(&path)
                .args(["--out", sub])
                .env("GROBUST_THREADS", threads)
                .current_dir(dir.path())
                .status()
                .unwrap();
            assert!(status.success());
        }
        seen.push(artifacts(&dir.path().join(sub)));
    }
    assert!(seen[0].contains_key("simulation.json"));
    assert_eq!(seen[0], seen[1]);
    assert_eq!(seen[0], seen[2]);
}

#[test]
fn convergence_table_shrinks_toward_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{"problem": "bsb-call", "solver": {"method": "lattice", "n_x_list": [100, 200, 400]}}"#;
    let out = grobust(dir.path(), &["table"], config);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("out/convergence.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 3);
    let diffs: Vec<f64> = rows.iter().map(|r| r[col("diff_to_oracle_lattice")].parse().unwrap()).collect();
    assert!(diffs.windows(2).all(|w| w[1] < w[0]), "{diffs:?}");
    assert!(rows[0][col("rate_lattice")].is_empty());
    assert!(rows[2][col("rate_lattice")].parse::<f64>().unwrap() > 0.0);
    let json = read_json(&dir.path().join("out/convergence.json"));
    assert_eq!(json[1]["n_x"], 200);
}

#[test]
fn oracle_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let out = grobust(dir.path(), &["oracle", "--probe", "0,1", "--probe", "0.5,0"], r#"{"problem": "lq"}"#);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let o = read_json(&dir.path().join("out/oracle.json"));
    assert_eq!(o["method"], "riccati");
    assert!((o["points"][0]["value"].as_f64().unwrap() - 1.193147180559945309).abs() < 1e-12);
    assert_eq!(o["points"].as_array().unwrap().len(), 2);

    let out = grobust(dir.path(), &["oracle"], r#"{"problem": "recursive-g"}"#);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn validate_reports_residuals() {
    let dir = tempfile::tempdir().unwrap();
    let out = grobust(dir.path(), &["validate"], r#"{"problem": "bsb-call", "solver": {"n_x": 100}}"#);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = read_json(&dir.path().join("out/validation.json"));
    let checks = v["checks"].as_array().unwrap();
    let lattice = checks.iter().find(|c| c["name"] == "lattice dpp residual").unwrap();
    assert_eq!(lattice["value"], 0.0);
    assert!(checks.iter().any(|c| c["name"] == "hjb dpp residual"));
    assert!((v["lattice_regularity"]["l_x"].as_f64().unwrap() - 1.0).abs() < 0.05);
}

#[test]
fn simulate_sits_below_the_lattice() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{"problem": "bsb-call", "solver": {"method": "lattice", "n_x": 101, "K": 50},
        "simulate": {"n_paths": 4000, "steps": 50, "q_profile": [0.5, 1.0]}}"#;
    let out = grobust(dir.path(), &["simulate"], config);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = read_json(&dir.path().join("out/simulation.json"));
    assert_eq!(s["estimates"].as_array().unwrap().len(), 1);
    assert_eq!(s["pass"], true);
}
