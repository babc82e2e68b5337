use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const LINE: &str = r#"
schema_version = 1

[params]
n = 1
omega = 2.0
m = 1.0

[scale_factor]
kind = "canonical"
start = -10.0

[domain]
n = 1
points = 64
stencil_order = 4

[initial]
constant = -0.5
modes = [{ amplitude = 0.05, kx = 1 }]

[flow]
t_end = 12.0
"#;

const PLANE: &str = r#"
schema_version = 1

[params]
n = 2
omega = 2.0
m = 1.0

[scale_factor]
kind = "canonical"
start = -10.0

[domain]
n = 2
points = 16
stencil_order = 4

[initial]
constant = -0.5
modes = [{ amplitude = 0.05, kx = 1 }]

[flow]
t_end = 12.0

[transition]
seeds = [0, 5, 20]
"#;

fn arwimcf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_arwimcf"))
        .args(args)
        .env_remove("ARWIMCF_THREADS")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn flow_run_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "line.toml", LINE);
    let out = dir.path().join("run");
    let res = arwimcf(&["flow", "run", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    for f in ["config.toml", "snapshots.bin", "diagnostics.csv", "report.json", "plots/u_tilde.svg"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let rep = report(&out);
    assert_eq!(rep["all_pass"], true);
    assert_eq!(rep["termination"]["reason"], "t_end");
    assert_eq!(rep["config_hash"].as_str().unwrap().len(), 64);
    let claims = rep["claims"].as_array().unwrap();
    assert!(!claims.is_empty());
    for c in claims {
        for key in ["predicted", "measured", "tolerance", "pass"] {
            assert!(c.get(key).is_some(), "claim without {key}: {c}");
        }
    }
    let mut names: Vec<&str> = claims.iter().map(|c| c["name"].as_str().unwrap()).collect();
    let total = names.len();
    names.dedup();
    assert_eq!(names.len(), total, "a claim appears twice");
}

#[test]
fn claims_flag_selects_checks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "line.toml", LINE);
    let out = dir.path().join("run");
    let res = arwimcf(&[
        "flow", "run", "--config", s(&cfg), "--out", s(&out), "--claims", "grad_u_rate,metric_limit",
    ]);
    assert_eq!(code(&res), 0);
    let names: Vec<String> = report(&out)["claims"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["name"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(names, ["grad_u_rate", "metric_limit"]);

    let res = arwimcf(&["analyze", "--config", s(&cfg), "--out", s(&out), "--claims", "no_such_claim"]);
    assert_eq!(code(&res), 2);
}

#[test]
fn bad_config_exits_2_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", &LINE.replace("t_end = 12.0", "t_end = 12.0\nt_edn = 3.0"));
    let res = arwimcf(&["flow", "run", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&res), 2);
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("t_edn") && err.contains("line"), "{err}");

    let cfg = write_config(dir.path(), "dim.toml", &LINE.replace("[domain]\nn = 1", "[domain]\nn = 2"));
    let res = arwimcf(&["flow", "run", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&res), 2);
    assert!(String::from_utf8_lossy(&res.stderr).contains("domain.n"));
}

#[test]
fn invalid_thread_count_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "line.toml", LINE);
    let res = Command::new(env!("CARGO_BIN_EXE_arwimcf"))
        .args(["background", "check", "--config", s(&cfg), "--out", s(dir.path())])
        .env("ARWIMCF_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(code(&res), 2);
}

#[test]
fn background_check_passes_on_canonical_factor() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "line.toml", LINE);
    let res = arwimcf(&["background", "check", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stdout));
    let cert: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("certificate.json")).unwrap()).unwrap();
    assert_eq!(cert["all_pass"], true);
}

#[test]
fn barrier_violation_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let text = PLANE.replace("amplitude = 0.05, kx = 1", "amplitude = 0.49, kx = 2");
    let cfg = write_config(dir.path(), "steep.toml", &text);
    let res = arwimcf(&["flow", "run", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&res), 3);
    assert!(String::from_utf8_lossy(&res.stderr).contains("barrier"));
}

#[test]
fn resume_reproduces_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "plane.toml", PLANE);
    let full = dir.path().join("full");
    let part = dir.path().join("part");
    assert_eq!(code(&arwimcf(&["flow", "run", "--config", s(&cfg), "--out", s(&full)])), 0);

    // Stopping early leaves the transition stage without data: checks fail, nothing crashes.
    let res = arwimcf(&["flow", "run", "--config", s(&cfg), "--out", s(&part), "--t-end", "5"]);
    assert_eq!(code(&res), 1);
    assert!(!report(&part)["skipped"].as_array().unwrap().is_empty());

    let snap = part.join("snapshots.bin");
    let res = arwimcf(&["flow", "resume", "--config", s(&cfg), "--out", s(&part), "--resume", s(&snap)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    for f in ["diagnostics.csv", "snapshots.bin", "transition.csv"] {
        assert_eq!(std::fs::read(full.join(f)).unwrap(), std::fs::read(part.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn stored_run_can_be_reanalysed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "plane.toml", PLANE);
    let out = dir.path().join("run");
    assert_eq!(code(&arwimcf(&["flow", "run", "--config", s(&cfg), "--out", s(&out), "--claims", "none"])), 0);
    let first = std::fs::read(out.join("diagnostics.csv")).unwrap();

    assert_eq!(code(&arwimcf(&["analyze", "--config", s(&cfg), "--out", s(&out)])), 0);
    assert!(!report(&out)["claims"].as_array().unwrap().is_empty());

    std::fs::remove_file(out.join("transition.csv")).unwrap();
    assert_eq!(code(&arwimcf(&["transition", "--config", s(&cfg), "--out", s(&out)])), 0);
    assert!(out.join("transition.csv").exists());
    assert_eq!(report(&out)["transition"]["c3"]["all_pass"], true);

    std::fs::remove_dir_all(out.join("plots")).unwrap();
    assert_eq!(code(&arwimcf(&["report", "--config", s(&cfg), "--out", s(&out)])), 0);
    assert!(out.join("plots/grad_u.svg").exists());
    assert_eq!(std::fs::read(out.join("diagnostics.csv")).unwrap(), first);
}

#[test]
fn solved_cosmology_feeds_a_flow_run() {
    let dir = tempfile::tempdir().unwrap();
    let fluid = PLANE.replace(
        "kind = \"canonical\"\nstart = -10.0",
        "kind = \"friedmann\"\nfluid = { n = 2, omega = 2.0, kappa = 1.0, rho0 = 1.0, tau0 = -1.0, f0 = 0.0 }",
    );
    let cfg = write_config(dir.path(), "fluid.toml", &fluid);
    let res = arwimcf(&["cosmology", "solve", "--config", s(&cfg), "--out", s(&dir.path().join("bg"))]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    assert!(dir.path().join("bg/friedmann.json").exists());

    // The exported file is referenced relative to the config's directory.
    let from_file = PLANE
        .replace(
            "kind = \"canonical\"\nstart = -10.0",
            "kind = \"ode_file\"\npath = \"bg/scale_factor.json\"",
        )
        .replace("seeds = [0, 5, 20]", "seeds = []");
    let cfg = write_config(dir.path(), "file.toml", &from_file);
    let res = arwimcf(&["flow", "run", "--config", s(&cfg), "--out", s(&dir.path().join("run"))]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stdout));
}
