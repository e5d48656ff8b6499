use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn magflow(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_magflow")).current_dir(dir).args(args).output().expect("binary runs")
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn lists_six_presets() {
    let tmp = tempfile::tempdir().unwrap();
    let out = magflow(tmp.path(), &["presets"]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 6);
}

#[test]
fn action_of_the_strip_path() {
    let tmp = tempfile::tempdir().unwrap();
    let out = magflow(tmp.path(), &["action-eval", "--preset", "torus-psi-cutoff", "--k", "0.3", "--out", "run"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "-0.2");
    let s = summary(&tmp.path().join("run"));
    assert!((s["action"].as_f64().unwrap() + 0.2).abs() < 1e-12);
    assert_eq!(s["op"], "action-eval");
    assert!(tmp.path().join("run/path.csv").exists());
}

#[test]
fn horocycle_bracket_contains_one_half() {
    let tmp = tempfile::tempdir().unwrap();
    let out = magflow(tmp.path(), &["mane", "--preset", "hyperbolic-horocycle", "--out", "m"]);
    assert_eq!(out.status.code(), Some(0));
    let mut rd = csv::Reader::from_path(tmp.path().join("m/brackets.csv")).unwrap();
    let mut seen = false;
    for rec in rd.records() {
        let rec = rec.unwrap();
        if &rec[0] == "c" {
            let (lo, hi): (f64, f64) = (rec[1].parse().unwrap(), rec[2].parse().unwrap());
            assert!(lo <= 0.5 && 0.5 <= hi, "[{lo}, {hi}]");
            seen = true;
        }
    }
    assert!(seen);
}

#[test]
fn malformed_config_exits_one_without_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "k = 0.3\n\n[surface]\nkind = \"flat-torus\"\n\n[lagrangian]\npotential = \"cos(2*pi*x\"\n").unwrap();
    let out = magflow(tmp.path(), &["action-eval", "--config", "bad.toml", "--out", "o"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.toml:7"), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!tmp.path().join("o").exists());

    fs::write(&cfg, "k = 0.3\nnonsense = true\n").unwrap();
    let out = magflow(tmp.path(), &["minimize", "--config", "bad.toml", "--preset", "torus-psi-cutoff", "--out", "o"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!tmp.path().join("o").exists());

    let out = magflow(tmp.path(), &["sweep", "--preset", "mechanical-torus", "--k-grid", "0.1:0.5", "--out", "o"]);
    assert_eq!(out.status.code(), Some(1));
    let out = magflow(tmp.path(), &["mane", "--preset", "no-such-model", "--out", "o"]);
    assert_eq!(out.status.code(), Some(1));
    let out = magflow(tmp.path(), &["taimanov", "--preset", "hyperbolic-horocycle", "--out", "o"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn unconverged_descent_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("c.toml"), "preset = \"torus-constant-B\"\n[solver]\nmax_iters = 1\n").unwrap();
    let out = magflow(tmp.path(), &["minimize", "--config", "c.toml", "--out", "r"]);
    assert_eq!(out.status.code(), Some(2));
    let s = summary(&tmp.path().join("r"));
    assert_eq!(s["status"], "numerical-failure");
    assert!(tmp.path().join("r/trace.csv").exists());
}

#[test]
fn obstructed_conormal_problem_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = r#"
preset = "torus-psi-cutoff"
k = 0.3

[boundary]
q0 = { kind = "point", x = 0.5, y = 0.5 }
q1 = { kind = "horizontal-line", y = 0.5 }

[path]
kind = "segment"
from = [0.5, 0.5]
to = [0.5, 1.5]
nodes = 64
"#;
    fs::write(tmp.path().join("c.toml"), cfg).unwrap();
    let out = magflow(tmp.path(), &["minimize", "--config", "c.toml", "--out", "r"]);
    assert_eq!(out.status.code(), Some(0));
    let r = &summary(&tmp.path().join("r"))["report"];
    assert_eq!(r["infeasible"], true);
    assert_eq!(r["is_orbit"], false);
    let gap = (2.0f64 * 0.3).sqrt() - 1.0;
    assert!(r["conormal_residual"].as_f64().unwrap() >= gap.abs() * 0.99);
}

#[test]
fn custom_model_from_expressions() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = r#"
k = 0.5
[surface]
kind = "flat-torus"
[lagrangian]
potential = "0.1 * sin(2 * pi * x)"
theta = { kind = "expr", x = "0.2 * cos(2 * pi * y)", y = "0" }
[path]
kind = "winding"
m = 1
n = 0
y0 = 0.3
nodes = 64
"#;
    fs::write(tmp.path().join("c.toml"), cfg).unwrap();
    let out = magflow(tmp.path(), &["minimize", "--config", "c.toml", "--out", "r"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = &summary(&tmp.path().join("r"))["report"];
    assert_eq!(r["is_orbit"], true);
    assert!(r["certificate"]["closure_residual"].as_f64().unwrap() < 1e-4);
}

#[test]
fn runs_are_bit_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("c.toml"), "preset = \"mechanical-torus\"\nk = 0.4\n[solver]\nperturb = 0.002\n").unwrap();
    let run = |name: &str, seed: &str| {
        let out = magflow(tmp.path(), &["minimize", "--config", "c.toml", "--seed", seed, "--out", name]);
        assert!(out.status.code().is_some());
        (
            fs::read(tmp.path().join(name).join("summary.json")).unwrap(),
            fs::read(tmp.path().join(name).join("path.csv")).unwrap(),
        )
    };
    let a = run("a", "11");
    let b = run("b", "11");
    let c = run("c", "12");
    assert_eq!(a, b);
    assert_ne!(a.1, c.1);

    let sweep = |name: &str| {
        let out = magflow(tmp.path(), &["sweep", "--preset", "mechanical-torus", "--k-grid", "0.3:0.5:3", "--out", name]);
        assert_eq!(out.status.code(), Some(0));
        fs::read(tmp.path().join(name).join("sweep.csv")).unwrap()
    };
    assert_eq!(sweep("s1"), sweep("s2"));
}
