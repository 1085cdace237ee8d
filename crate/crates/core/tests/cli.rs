use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sde-ident"));
    c.env_remove("SDE_IDENT_OUT");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn simulate_to(dir: &Path, scenario: &str, seed: &str) -> PathBuf {
    let path = dir.join("traj.csv");
    let o = run(&["simulate", "--scenario", scenario, "--seed", seed, "--out", path.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    path
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn study_json(dir: &Path) -> Value {
    let entry = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|x| x == "json"))
        .unwrap();
    read_json(&entry)
}

#[test]
fn simulate_writes_header_and_one_row_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let path = simulate_to(dir.path(), "a", "42");
    let text = std::fs::read_to_string(path).unwrap();
    assert_eq!(text.lines().count(), 1001);
}

#[test]
fn repeated_seed_takes_last_value() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    assert_eq!(
        code(&run(&["simulate", "--scenario", "b", "--seed", "1", "--seed", "2", "--out", a.to_str().unwrap()])),
        0
    );
    assert_eq!(code(&run(&["simulate", "--scenario", "b", "--seed", "2", "--out", b.to_str().unwrap()])), 0);
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn output_directory_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o =
        bin().args(["simulate", "--scenario", "c", "--seed", "5"]).env("SDE_IDENT_OUT", dir.path()).output().unwrap();
    assert_eq!(code(&o), 0);
    assert!(dir.path().join("traj_c_5.csv").exists());
}

#[test]
fn bad_inputs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    assert_eq!(code(&run(&["simulate", "--scenario", missing.to_str().unwrap()])), 2);
    assert_eq!(code(&run(&["simulate", "--scenario", "z"])), 2);
    let data = simulate_to(dir.path(), "b", "1");
    let d = data.to_str().unwrap();
    assert_eq!(code(&run(&["estimate", "--method", "newton", "--data", d, "--scenario", "b"])), 2);
    let nope = dir.path().join("missing.csv");
    assert_eq!(code(&run(&["estimate", "--method", "mle", "--data", nope.to_str().unwrap(), "--scenario", "b"])), 2);
    let garbage = dir.path().join("garbage.csv");
    std::fs::write(&garbage, "not,a,trajectory\nx,y,z\n").unwrap();
    assert_eq!(code(&run(&["estimate", "--method", "mle", "--data", garbage.to_str().unwrap(), "--scenario", "b"])), 2);
    assert_eq!(code(&run(&["estimate", "--method", "em", "--data", d, "--scenario", "b", "--alpha", "0"])), 2);
    assert_eq!(code(&run(&["study", "--scenario", "b", "--runs", "0"])), 2);
    assert_eq!(code(&run(&["study", "--scenario", "b", "--methods", "mle,mle", "--runs", "1"])), 2);
    assert_eq!(code(&run(&["study", "--scenario", "b", "--methods", "mle,foo", "--runs", "1"])), 2);
    assert_eq!(code(&run(&["frobnicate"])), 2);
}

#[test]
fn mle_estimate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_to(dir.path(), "b", "7");
    let outs: Vec<Value> = ["one.json", "two.json"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            let o = run(&[
                "estimate",
                "--method",
                "mle",
                "--data",
                data.to_str().unwrap(),
                "--scenario",
                "b",
                "--seed",
                "3",
                "--out",
                out.to_str().unwrap(),
            ]);
            assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
            read_json(&out)
        })
        .collect();
    assert_eq!(outs[0], outs[1]);
    assert_eq!(outs[0]["theta"].as_array().unwrap().len(), 3);
}

#[test]
fn em_trace_is_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_to(dir.path(), "a", "4");
    let out = dir.path().join("em.json");
    let o = run(&[
        "estimate",
        "--method",
        "em",
        "--data",
        data.to_str().unwrap(),
        "--scenario",
        "a",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let doc = read_json(&out);
    let ll: Vec<f64> =
        doc["trace"]["iterations"].as_array().unwrap().iter().map(|i| i["loglik"].as_f64().unwrap()).collect();
    assert!(ll.len() > 1);
    for w in ll.windows(2) {
        assert!(w[1] >= w[0] - 1e-9);
    }
}

#[test]
fn small_bo_estimate_returns_all_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_to(dir.path(), "b", "9");
    let out = dir.path().join("bo.json");
    let o = run(&[
        "estimate",
        "--method",
        "bo-egp",
        "--data",
        data.to_str().unwrap(),
        "--scenario",
        "b",
        "--budget",
        "3",
        "--n-initial",
        "4",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let doc = read_json(&out);
    assert_eq!(doc["theta"].as_array().unwrap().len(), 3);
    assert_eq!(doc["evaluations"].as_u64().unwrap(), 7);
}

#[test]
fn oracle_study_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "study",
        "--scenario",
        "a",
        "--methods",
        "oracle-true-theta",
        "--runs",
        "2",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("oracle-true-theta"));
    let doc = study_json(dir.path());
    let rmse: Vec<f64> =
        doc["study"]["methods"][0]["rmse"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(rmse, vec![0.0; 3]);
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 2);
}
