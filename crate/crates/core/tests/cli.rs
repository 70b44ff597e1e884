use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_probit-sun"));
    for (k, _) in std::env::vars() {
        if k.starts_with("PROBIT_SUN_") {
            c.env_remove(k);
        }
    }
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn probit-sun")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let f = dir.join(name);
    std::fs::write(&f, text).unwrap();
    f
}

const SCALAR: &str = r#"{"n": 2, "F": [[1.0]], "P0": [[1.0]], "W": [[2.0]]}"#;
const SYNTH: &str = r#"{"n": 12, "F": [[1.0]], "P0": [[3.0]], "W": [[0.01]]}"#;

#[test]
fn simulate_is_reproducible() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "spec.json", SYNTH);
    let (a, b) = (d.path().join("a.csv"), d.path().join("b.csv"));
    for out in [&a, &b] {
        let o = run(&["simulate", "--config", p(&cfg), "--seed", "7", "--out", p(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    assert!(text.starts_with("t,y\n"));
    assert_eq!(text.lines().count(), 13);
}

#[test]
fn predict_reproduces_exact_probabilities() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "spec.json", SCALAR);
    let data = write(d.path(), "y.csv", "y\n1\n1\n");
    let o = run(&["predict", "--config", p(&cfg), "--data", p(&data), "--seed", "1"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let probs: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert_eq!(text.lines().next().unwrap(), "t,component,prob,std_error,y");
    assert!((probs[0] - 0.5).abs() < 1e-10);
    assert!((probs[1] - 0.709786).abs() < 1e-4, "{}", probs[1]);
}

#[test]
fn smooth_schema() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "spec.json", SCALAR);
    let data = write(d.path(), "y.csv", "t,y\n1,1\n2,0\n");
    let out = d.path().join("sm.csv");
    let o = run(&["smooth", "--config", p(&cfg), "--data", p(&data), "--R", "2000", "--seed", "1", "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,coordinate,median,q25,q75");
    for l in lines {
        let v: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
        assert!(v[3] <= v[2] && v[2] <= v[4]);
    }
}

#[test]
fn thread_count_and_env_do_not_change_output() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "spec.json", SYNTH);
    let data = d.path().join("y.csv");
    assert!(run(&["simulate", "--config", p(&cfg), "--seed", "3", "--out", p(&data)]).status.success());
    let mut outs = Vec::new();
    for threads in ["1", "2", "3"] {
        let o = run(&["filter", "--method", "bpf", "--R", "500", "--config", p(&cfg), "--data", p(&data), "--seed", "9", "--threads", threads]);
        assert!(o.status.success());
        outs.push(o.stdout);
    }
    let o = bin()
        .args(["filter", "--config", p(&cfg), "--data", p(&data)])
        .env("PROBIT_SUN_METHOD", "bpf")
        .env("PROBIT_SUN_R", "500")
        .env("PROBIT_SUN_SEED", "9")
        .output()
        .unwrap();
    outs.push(o.stdout);
    assert!(outs.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["filter", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    let missing = run(&["predict", "--config", "/nonexistent/spec.json", "--data", "/nonexistent/y.csv"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("I/O"));

    let bad = write(d.path(), "bad.json", r#"{"n": 2, "F": [[1.0]], "P0": [[1.0, "x"]]}"#);
    let o = run(&["simulate", "--config", p(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/P0/0/1"));

    let cfg = write(d.path(), "spec.json", SCALAR);
    let data = write(d.path(), "y2.csv", "y1,y2\n1,0\n0,1\n");
    let o = run(&["predict", "--config", p(&cfg), "--data", p(&data)]);
    assert_eq!(o.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&o.stderr);
    assert!(msg.contains("m = 2") && msg.contains("m = 1"), "{msg}");
}

#[test]
fn covariate_design_and_marglik() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "spec.json", r#"{"n": 10, "design": "intercept+covariates", "covariates": ["x"]}"#);
    let data = d.path().join("y.csv");
    let o = run(&["simulate", "--config", p(&cfg), "--seed", "2", "--out", p(&data)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&data).unwrap();
    assert!(text.starts_with("t,y,x\n"));
    let o = run(&["marglik", "--config", p(&cfg), "--data", p(&data), "--grid", "0.01,0.1", "--seed", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = String::from_utf8(o.stdout).unwrap();
    assert_eq!(out.lines().count(), 5);
    assert_eq!(out.lines().filter(|l| l.ends_with(",1")).count(), 1);
}

#[test]
fn evaluate_writes_table_and_summary() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "spec.json", SYNTH);
    let data = d.path().join("y.csv");
    assert!(run(&["simulate", "--config", p(&cfg), "--seed", "4", "--out", p(&data)]).status.success());
    let out = d.path().join("rank.csv");
    let o = run(&[
        "evaluate", "--config", p(&cfg), "--data", p(&data), "--R", "300", "--replications", "2", "--grid", "200",
        "--methods", "iid,ekf", "--out", p(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 5);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.path().join("rank.summary.json")).unwrap()).unwrap();
    assert_eq!(summary["ranking"].as_array().unwrap().len(), 2);
    let rate = summary["classification"]["rate"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&rate));
}

#[test]
fn selftest_subset() {
    let o = run(&["selftest", "--only", "1,2"]);
    assert_eq!(o.status.code(), Some(0));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.starts_with("PASS 1 "));
    assert_eq!(run(&["selftest", "--only", "12"]).status.code(), Some(2));
}
