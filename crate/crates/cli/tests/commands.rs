use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_fluidhopf");

const SYMMETRIC: &str = r#"
[model]
rates = [1.0, -1.0]
labels = ["up", "down"]
[model.generator]
kind = "constant"
matrix = [[-1.0, 1.0], [1.0, -1.0]]
[factorize]
c = 1.0
"#;

const ABSORBING: &str = r#"
[model]
rates = [1.0, -1.0]
labels = ["up", "down"]
[model.generator]
kind = "constant"
matrix = [[-1.0, 1.0], [0.0, 0.0]]

[numerics]
ds = 2e-3
da = 2e-3
eta = 12.0
seed = 11

[passage]
level = 1.0
sign = "plus"
boundary = { kind = "exp_indicator", c = 1.0, target = "up" }

[simulate]
start = "up"
level = 1.0
sign = "plus"
n = 200000
payoff = { kind = "discounted", c = 1.0 }
"#;

const SINUSOIDAL: &str = r#"
[model]
rates = [1.0, -1.0]
bound_k = 1.5
[model.generator]
kind = "fourier_polynomial"
base = [[-1.0, 1.0], [1.0, -1.0]]
fourier = [{ coefficient = [[-0.5, 0.5], [0.5, -0.5]], frequency = 1.0 }]
[factorize]
c = 1.0
"#;

fn run(dir: &Path, config: &str, args: &[&str], threads: Option<&str>) -> Output {
    let path = dir.join("run.toml");
    std::fs::write(&path, config).unwrap();
    let mut cmd = Command::new(BIN);
    cmd.args(args).arg("--config").arg(&path).arg("--out").arg(dir);
    match threads {
        Some(t) => cmd.env("FLUIDHOPF_THREADS", t),
        None => cmd.env_remove("FLUIDHOPF_THREADS"),
    };
    cmd.output().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn factorize_symmetric_chain() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), SYMMETRIC, &["factorize"], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&dir.path().join("factorization.json"));
    let pi = v["Pi_plus"][0][0].as_f64().unwrap();
    assert!((pi - (2.0 - 3f64.sqrt())).abs() < 1e-12);
    assert!((v["Q_plus"][0][0].as_f64().unwrap() + 3f64.sqrt()).abs() < 1e-12);
    assert!(v["residual"].as_f64().unwrap() <= 1e-10);
    assert_eq!(v["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn factorize_trivial_generator() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SYMMETRIC.replace("[[-1.0, 1.0], [1.0, -1.0]]", "[[0.0, 0.0], [0.0, 0.0]]");
    assert!(run(dir.path(), &cfg, &["factorize"], None).status.success());
    let v = json(&dir.path().join("factorization.json"));
    assert_eq!(v["Pi_plus"][0][0].as_f64().unwrap(), 0.0);
    assert_eq!(v["Pi_minus"][0][0].as_f64().unwrap(), 0.0);
}

#[test]
fn factorize_rejects_time_varying() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), SINUSOIDAL, &["factorize"], None);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("factorize requires a constant generator"));
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = SYMMETRIC.replace("c = 1.0", "c = 1.0\nspeed = 3");
    assert_eq!(run(dir.path(), &bad, &["factorize"], None).status.code(), Some(1));
    // no [simulate] section
    assert_eq!(run(dir.path(), SYMMETRIC, &["simulate"], None).status.code(), Some(1));
    assert_eq!(run(dir.path(), SYMMETRIC, &["frobnicate"], None).status.code(), Some(1));
}

#[test]
fn solver_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    // ds·K above 1/2
    let out = run(dir.path(), ABSORBING, &["passage", "--ds", "0.9"], None);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let cfg = SYMMETRIC.replace("c = 1.0", "c = -1.0");
    assert_eq!(run(dir.path(), &cfg, &["factorize"], None).status.code(), Some(2));
}

#[test]
fn laplace_table_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), ABSORBING, &["passage", "--laplace"], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("laplace.csv")).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# fluidhopf config_hash="));
    assert_eq!(lines.next().unwrap(), "s,from_state,to_state,value");
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&first[..3], &["0.0", "up", "up"]);
    let v: f64 = first[3].parse().unwrap();
    assert!((v - (-2.0f64).exp()).abs() < 2e-3, "{v}");
}

#[test]
fn passage_writes_field_and_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), ABSORBING, &["passage"], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let header = |f: &str| {
        let t = std::fs::read_to_string(dir.path().join(f)).unwrap();
        t.lines().nth(1).unwrap().to_string()
    };
    assert_eq!(header("passage.csv"), "s,state,a,value");
    for f in ["j_table.csv", "p_table.csv", "g_table.csv"] {
        assert_eq!(header(f), "s,state,value");
    }
    let p = std::fs::read_to_string(dir.path().join("p_table.csv")).unwrap();
    let row: Vec<&str> = p.lines().nth(2).unwrap().split(',').collect();
    assert_eq!(row[1], "up");
    let v: f64 = row[2].parse().unwrap();
    assert!((v - (-2.0f64).exp()).abs() < 2e-3);
}

#[test]
fn simulate_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), ABSORBING, &["simulate"], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&dir.path().join("simulate.json"));
    let (mean, se) = (v["mean"].as_f64().unwrap(), v["stderr"].as_f64().unwrap());
    assert!((mean - (-2.0f64).exp()).abs() <= 3.0 * se + v["bias_bound"].as_f64().unwrap());
    assert_eq!(v["n"].as_u64(), Some(200_000));
    assert_eq!(v["seed"].as_u64(), Some(11));
}

#[test]
fn outputs_are_identical_across_thread_counts() {
    let read = |threads: &str| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ABSORBING.replace("n = 200000", "n = 20000");
        assert!(run(dir.path(), &cfg, &["simulate"], Some(threads)).status.success());
        assert!(run(dir.path(), &cfg, &["passage", "--laplace"], Some(threads)).status.success());
        (
            std::fs::read(dir.path().join("simulate.json")).unwrap(),
            std::fs::read(dir.path().join("laplace.csv")).unwrap(),
        )
    };
    let one = read("1");
    assert_eq!(one, read("1"));
    assert_eq!(one, read("4"));
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), SYMMETRIC, &["factorize"], Some("zero")).status.code(), Some(1));
}

#[test]
fn overrides_change_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ABSORBING.replace("n = 200000", "n = 1000");
    assert!(run(dir.path(), &cfg, &["simulate"], None).status.success());
    let a = json(&dir.path().join("simulate.json"));
    assert!(run(dir.path(), &cfg, &["simulate", "--seed", "5", "--set", "simulate.n=500"], None).status.success());
    let b = json(&dir.path().join("simulate.json"));
    assert_eq!(b["seed"].as_u64(), Some(5));
    assert_eq!(b["n"].as_u64(), Some(500));
    assert_ne!(a["config_hash"], b["config_hash"]);
}

#[test]
fn verify_unknown_suite_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(BIN).args(["verify", "everything", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn verify_jumps_suite_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{SYMMETRIC}\n[verify]\nmc_n = 20000\nks_n = 20000\n");
    let path = dir.path().join("v.toml");
    std::fs::write(&path, cfg).unwrap();
    let out = Command::new(BIN)
        .args(["verify", "jumps", "--config"])
        .arg(&path)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}");
    assert!(stdout.contains("[PASS] C8"));
    let report = std::fs::read_to_string(dir.path().join("verify_jumps.csv")).unwrap();
    assert_eq!(report.lines().nth(1).unwrap(), "criterion,check,measured,tolerance,pass");
}
