use serde_json::Value;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const STANDARD: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/standard_pair.toml");

const SMALL: &str = r#"
name = "small"
[domain]
center = [0.0, 0.0, 4.0]
radius = 1.0
grid = 33

[pair.second]
a = ["0.3*gauss(0.1,0,4,0.5)", "0.2*gauss(0,0.1,4.1,0.5)", "0"]
q = "0.5*gauss(-0.1,0,3.9,0.5)"

[carleman]
estimates = ["interior_laplacian", "boundary_laplacian"]
ensemble_size = 4

[distinguish]
grids = [25, 33]
"#;

const SECOND_A: &str = r#"a = ["0.3*gauss(0.1,0,4,0.5)", "0.2*gauss(0,0.1,4.1,0.5)", "0"]"#;
const SECOND_Q: &str = r#"q = "0.5*gauss(-0.1,0,3.9,0.5)""#;

fn bihar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bihar")).args(args).output().unwrap()
}

fn run(cmd: &str, config: &Path, out: &Path, seed: &str) -> Output {
    bihar(&[cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", seed])
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn identical_pair_is_indistinguishable() {
    let tmp = tempfile::tempdir().unwrap();
    // both members default to zero coefficients
    let same = SMALL.replace(SECOND_A, "").replace(SECOND_Q, "");
    let cfg = write_config(tmp.path(), "same.toml", &same);
    let out = run("distinguish", &cfg, tmp.path(), "1");
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&tmp.path().join("distinguish-seed1-000"));
    assert_eq!(r["pass"], Value::Bool(true));
    assert!(tmp.path().join("distinguish-seed1-000/distinguish.csv").exists());
}

#[test]
fn distinct_pair_is_separated() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let out = run("distinguish", &cfg, tmp.path(), "0");
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn reruns_are_append_only_and_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    for _ in 0..2 {
        let out = run("carleman", &cfg, tmp.path(), "7");
        assert!(matches!(out.status.code(), Some(0) | Some(2)), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let first = tmp.path().join("carleman-seed7-000");
    let second = tmp.path().join("carleman-seed7-001");
    let (mut a, mut b) = (report(&first), report(&second));
    assert_ne!(a["header"]["timestamp_unix"], Value::Null);
    a["header"]["timestamp_unix"] = Value::Null;
    b["header"]["timestamp_unix"] = Value::Null;
    assert_eq!(a, b);
    assert_eq!(fs::read(first.join("carleman.csv")).unwrap(), fs::read(second.join("carleman.csv")).unwrap());
    // the resolved config carries the command-line seed and the defaults
    assert_eq!(a["config"]["seed"], Value::from(7));
    assert_eq!(a["config"]["carleman"]["max_spread"], Value::from(2.0));
}

#[test]
fn seed_changes_the_ensemble() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    run("carleman", &cfg, tmp.path(), "1");
    run("carleman", &cfg, tmp.path(), "2");
    let a = fs::read(tmp.path().join("carleman-seed1-000/carleman.csv")).unwrap();
    let b = fs::read(tmp.path().join("carleman-seed2-000/carleman.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn h_below_oscillation_floor_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", &format!("h_list = [0.5, 0.01]\n{SMALL}"));
    let out = run("cgo", &cfg, tmp.path(), "0");
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("oscillation floor"));
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 1, "no run directory on error");
}

#[test]
fn malformed_configs_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let unknown = write_config(tmp.path(), "unknown.toml", &format!("{SMALL}\n[forward]\ngridz = [9]\n"));
    assert_eq!(run("forward", &unknown, tmp.path(), "0").status.code(), Some(1));
    let ascending = write_config(tmp.path(), "asc.toml", &format!("h_list = [0.2, 0.3]\n{SMALL}"));
    assert_eq!(run("cgo", &ascending, tmp.path(), "0").status.code(), Some(1));
    let expr = write_config(tmp.path(), "expr.toml", &SMALL.replace("0.5*gauss(-0.1,0,3.9,0.5)", "0.5*gauss(-0.1,0"));
    assert_eq!(run("distinguish", &expr, tmp.path(), "0").status.code(), Some(1));
    assert_eq!(run("forward", &tmp.path().join("missing.toml"), tmp.path(), "0").status.code(), Some(1));
    assert_eq!(bihar(&["forward", "--config"]).status.code(), Some(1));
}

#[test]
fn standard_forward_converges() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run("forward", Path::new(STANDARD), tmp.path(), "0");
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let csv = fs::read_to_string(tmp.path().join("forward-seed0-000/forward.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn standard_identity_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run("identity", Path::new(STANDARD), tmp.path(), "0");
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let dir = tmp.path().join("identity-seed0-000");
    for f in ["main_identity.csv", "slice_integrals.csv", "q_identity.csv"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    let r = report(&dir);
    assert_eq!(r["config"]["name"], Value::from("standard_pair"));
    assert!(r["checks"].as_array().unwrap().iter().all(|c| c["pass"] == Value::Bool(true)));
}
