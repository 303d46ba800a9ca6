use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn mlm(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mlm"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("MLM_LOG", "error")
        .output()
        .expect("spawn mlm")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn report(dir: &Path, name: &str) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join(name)).unwrap()).unwrap()
}

fn worked() -> String {
    fixture("worked.toml").display().to_string()
}

fn three_atom() -> String {
    fixture("three_atom.toml").display().to_string()
}

#[test]
fn worked_instance_reports_closed_form_energy() {
    let dir = tempfile::tempdir().unwrap();
    let out = mlm(&["solve", "--config", &worked()], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rep = report(dir.path(), "report.json");
    let energy = rep["energy"].as_f64().unwrap();
    assert!((energy - 779.0 / 1440.0).abs() <= 1e-6, "{energy}");
    assert_eq!(rep["converged"], true);
    assert_eq!(rep["quadrature"], "composite-midpoint");
    // Resolved defaults are echoed alongside file values.
    assert_eq!(rep["config"]["ns"], 4096);
    assert_eq!(rep["config"]["max_iter"], 500);
    assert_eq!(rep["config"]["duality_tol"], 1e-6);
    assert_eq!(rep["config"]["z_lo"], 0.5);
    for f in ["surface.csv", "cells.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    assert!(!dir.path().join("cells.svg").exists());
}

#[test]
fn flags_override_config_values() {
    let dir = tempfile::tempdir().unwrap();
    let out = mlm(&["solve", "--config", &worked(), "--ns", "128", "--tol", "1e-8", "--svg"], dir.path());
    assert_eq!(code(&out), 0);
    let rep = report(dir.path(), "report.json");
    assert_eq!(rep["n_s"], 128);
    assert_eq!(rep["config"]["tol"], 1e-8);
    let surface = fs::read_to_string(dir.path().join("surface.csv")).unwrap();
    assert_eq!(surface.lines().count(), 129);
    assert!(fs::read_to_string(dir.path().join("cells.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn malformed_measure_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let nu = dir.path().join("bad.csv");
    fs::write(&nu, "z,theta,mass\n0.5,abc,1\n").unwrap();
    let out = mlm(&["solve", "--nu", nu.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.csv"));
}

#[test]
fn unknown_config_key_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, format!("nu = {:?}\ntolerance = 1e-3\n", fixture("worked_nu.csv"))).unwrap();
    let out = mlm(&["solve", "--config", cfg.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(code(&out), 1);
}

#[test]
fn iteration_cap_writes_flagged_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = mlm(&["solve", "--config", &three_atom(), "--max-iter", "1"], dir.path());
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    let rep = report(dir.path(), "report.json");
    assert_eq!(rep["converged"], false);
    assert!(rep["residual"].as_f64().unwrap() > 1e-7);
}

#[test]
fn outputs_are_byte_identical_across_runs_and_threads() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(code(&mlm(&["solve", "--config", &three_atom(), "--threads", "1"], a.path())), 0);
    assert_eq!(code(&mlm(&["solve", "--config", &three_atom(), "--threads", "3"], b.path())), 0);
    for f in ["surface.csv", "cells.csv", "report.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn plot_writes_only_the_picture() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&mlm(&["plot", "--config", &three_atom()], dir.path())), 0);
    let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, ["cells.svg"]);
}

#[test]
fn oracle_passes_on_worked_instance() {
    let dir = tempfile::tempdir().unwrap();
    let out = mlm(&["oracle", "--config", &worked(), "--k", "3", "--mesh-m", "12"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rep = report(dir.path(), "oracle.json");
    assert_eq!(rep["pass"], true);
    assert!(rep["solver_energy"].as_f64().unwrap() <= rep["oracle_cost"].as_f64().unwrap());
    assert_eq!(rep["heights"].as_array().unwrap().len(), 3);
    assert_eq!(serde_json::from_slice::<serde_json::Value>(&out.stdout).unwrap(), rep);
}

#[test]
fn oracle_passes_on_two_atoms() {
    let dir = tempfile::tempdir().unwrap();
    let nu = dir.path().join("nu.csv");
    fs::write(&nu, "z,theta,mass\n0.3,1.2,0.45\n0.7,1.8,0.55\n").unwrap();
    let args = ["oracle", "--nu", nu.to_str().unwrap(), "--k", "3", "--mesh-m", "12"];
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "cost = \"sg2d\"\n").unwrap();
    let out = mlm(&[&args[..], &["--config", cfg.to_str().unwrap()]].concat(), &dir.path().join("out"));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn oversize_oracle_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = mlm(&["oracle", "--config", &worked(), "--k", "10"], dir.path());
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("size limit"));
}

#[test]
fn gradcheck_passes_on_coarse_and_fine_grids() {
    let dir = tempfile::tempdir().unwrap();
    let nu = dir.path().join("nu.csv");
    fs::write(&nu, "z,theta,mass\n0.2,1.0,0.3\n0.5,1.5,0.3\n0.8,2.0,0.4\n").unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "cost = \"sg2d\"\n").unwrap();
    for ns in ["64", "4096"] {
        let out_dir = dir.path().join(ns);
        let out = mlm(&["gradcheck", "--config", cfg.to_str().unwrap(), "--nu", nu.to_str().unwrap(), "--ns", ns], &out_dir);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let rep = report(&out_dir, "gradcheck.json");
        assert!(rep["max_rel_error"].as_f64().unwrap() <= 1e-5);
        assert_eq!(rep["per_sample"].as_array().unwrap().len(), 5);
    }
}

#[test]
fn stability_table_is_non_increasing() {
    let dir = tempfile::tempdir().unwrap();
    let out = mlm(&["stability", "--config", &three_atom()], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(dir.path().join("stability.csv")).unwrap();
    let norms: Vec<f64> = table.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(norms.len(), 3);
    assert!(norms.windows(2).all(|w| w[1] <= 1.2 * w[0]), "{norms:?}");
}

#[test]
fn stability_at_zero_delta_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    for mode in ["mass", "position"] {
        let out_dir = dir.path().join(mode);
        let out = mlm(&["stability", "--config", &three_atom(), "--deltas", "0", "--mode", mode], &out_dir);
        assert_eq!(code(&out), 0);
        assert_eq!(report(&out_dir, "stability.json")["rows"][0]["sup_norm"], 0.0);
    }
}

#[test]
fn ascending_deltas_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = mlm(&["stability", "--config", &three_atom(), "--deltas", "0.01,0.1"], dir.path());
    assert_eq!(code(&out), 1);
}
