//! End-to-end tests of the binary: exit codes, file outputs, config
//! round-trip, determinism.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mahjb"))
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn solve_l_shape_produces_negative_bowl() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "run.toml",
        "[domain]\nkind = \"l-shape\"\n[grid]\nh = 0.0625\n[source]\nconstant = 1.0\n",
    );
    let out = bin()
        .args(["solve", "--config", &cfg, "--out"])
        .arg(tmp.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    let csv = std::fs::read_to_string(tmp.path().join("out/solution.csv")).unwrap();
    assert!(csv.starts_with("x1,x2,u\n"));
    let min = csv
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
        .fold(f64::INFINITY, f64::min);
    assert!(min < -0.1, "min {min}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("out/report.json")).unwrap())
            .unwrap();
    assert_eq!(report["converged"], serde_json::Value::Bool(true));
}

#[test]
fn zero_source_gives_all_zero_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "run.toml",
        "[domain]\nkind = \"unit-square\"\n[grid]\nh = 0.25\n[source]\nconstant = 0.0\n",
    );
    let out = bin()
        .args(["solve", "--config", &cfg, "--out"])
        .arg(tmp.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(tmp.path().join("out/solution.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let u: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(u.abs() < 1e-12, "line {line}");
    }
}

#[test]
fn bad_config_key_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.toml", "[solver]\nbogus = 3\n");
    let out = bin().args(["solve", "--config", &cfg]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn iteration_cap_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "run.toml",
        "[domain]\nkind = \"l-shape\"\n[grid]\nh = 0.125\n[source]\nconstant = 1.0\n\
         [solver]\nmax_iters = 1\n",
    );
    let out = bin()
        .args(["solve", "--config", &cfg, "--out"])
        .arg(tmp.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", stdout(&out));
}

fn slab_verify_config(semantics: &str, role: &str) -> String {
    format!(
        "[domain]\nkind = \"slab\"\nlength = 1.0\n[grid]\nh = 0.0625\n\
         [source]\nconstant = 0.0\n\
         [verify]\ncandidate = \"prop-one-family\"\nc = 1.0\nsemantics = \"{semantics}\"\nrole = \"{role}\"\n"
    )
}

#[test]
fn verify_prop_one_family_bs_dirichlet_passes_with_comparison_gap() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "v.toml", &slab_verify_config("bs-dirichlet", "both"));
    let out = bin()
        .args(["verify", "--config", &cfg, "--out"])
        .arg(tmp.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    let text = stdout(&out);
    assert!(text.contains("NO-VIOLATION-FOUND"));
    assert!(text.contains("comparison witness: zero subsolution exceeds the candidate by 1 at (0,"));
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(tmp.path().join("out/certificates.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["comparison"]["gap"], serde_json::json!(1.0));
    assert_eq!(report["comparison"]["x"][0], serde_json::json!(0.0));
}

#[test]
fn verify_semicontinuous_semantics_falsifies_subsolution() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "v.toml", &slab_verify_config("ug-semi-continuous", "sub"));
    let out = bin()
        .args(["verify", "--config", &cfg, "--out"])
        .arg(tmp.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", stdout(&out));
    assert!(stdout(&out).contains("not upper semi-continuous"));
}

#[test]
fn verify_prop_two_family_bs_mixed_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "v.toml",
        "[domain]\nkind = \"unit-square\"\n[grid]\nh = 0.0625\nsplit = \"left-right-dirichlet\"\n\
         [source]\nconstant = 0.0\n\
         [verify]\ncandidate = \"prop-two-family\"\nc = 1.0\nsemantics = \"bs-mixed\"\nrole = \"both\"\n",
    );
    let out = bin()
        .args(["verify", "--config", &cfg, "--out"])
        .arg(tmp.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert!(stdout(&out).contains("comparison witness: zero subsolution exceeds the candidate by 1"));
}

#[test]
fn verify_bs_mixed_requires_split() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "v.toml",
        "[domain]\nkind = \"unit-square\"\n[grid]\nh = 0.125\n[source]\nconstant = 0.0\n\
         [verify]\ncandidate = \"prop-two-family\"\nsemantics = \"bs-mixed\"\n",
    );
    let out = bin().args(["verify", "--config", &cfg]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn verify_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "v.toml", &slab_verify_config("bs-dirichlet", "super"));
    let mut reports = Vec::new();
    for dir in ["a", "b"] {
        let out = bin()
            .args(["verify", "--config", &cfg, "--seed", "7", "--out"])
            .arg(tmp.path().join(dir))
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0));
        reports.push(std::fs::read(tmp.path().join(dir).join("certificates.json")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn cross_section_levels_and_flat_zero_case() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "cs.toml",
        "[domain]\nkind = \"l-shape\"\n[grid]\nlevels = [0.125, 0.0625]\n[source]\nconstant = 0.0\n",
    );
    let out = bin()
        .args(["cross-section", "--config", &cfg, "--out"])
        .arg(tmp.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    for mesh in 1..=2 {
        let csv = std::fs::read_to_string(
            tmp.path().join(format!("out/cross_section_mesh{mesh}.csv")),
        )
        .unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("s,u"));
        for line in lines {
            let mut parts = line.split(',');
            let s: f64 = parts.next().unwrap().parse().unwrap();
            let u: f64 = parts.next().unwrap().parse().unwrap();
            assert!(s >= 0.0);
            assert!(u.abs() < 1e-12);
        }
    }
    let text = stdout(&out);
    assert!(text.contains("mesh 1:"));
    assert!(text.contains("degrees of freedom"));
}

#[test]
fn convergence_quadratic_exact_and_missing_key() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "conv.toml",
        "[domain]\nkind = \"unit-square\"\n[grid]\nlevels = [0.125, 0.0625]\n\
         [source]\nconstant = 2.0\n[convergence]\nexact = \"0.5*(x1^2 + x2^2)\"\n",
    );
    let out = bin()
        .args(["convergence", "--config", &cfg, "--out"])
        .arg(tmp.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    let csv = std::fs::read_to_string(tmp.path().join("out/convergence.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("level,h,dof,sup_error,ratio"));
    for line in lines {
        let err: f64 = line.split(',').nth(3).unwrap().parse().unwrap();
        assert!(err < 1e-7, "line {line}");
    }

    let missing = write(
        tmp.path(),
        "missing.toml",
        "[domain]\nkind = \"unit-square\"\n[grid]\nh = 0.125\n[source]\nconstant = 2.0\n",
    );
    let out = bin().args(["convergence", "--config", &missing]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn print_config_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let out1 = bin().args(["solve", "--print-config"]).output().unwrap();
    assert_eq!(out1.status.code(), Some(0));
    let echoed = write(tmp.path(), "echo.toml", &stdout(&out1));
    let out2 = bin().args(["solve", "--print-config", "--config", &echoed]).output().unwrap();
    assert_eq!(out2.status.code(), Some(0));
    assert_eq!(stdout(&out1), stdout(&out2));
}

#[test]
fn help_documents_defaults() {
    let out = bin().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("Config defaults"));
    assert!(text.contains("tol = "));
}
