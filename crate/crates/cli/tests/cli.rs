use std::path::Path;
use std::process::Command;

fn fsi(dir: &Path, config: &str, args: &[&str]) -> (i32, String) {
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, config).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_fsi"))
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .args(args)
        .env("FSI_THREADS", "2")
        .output()
        .unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

const SMALL: &str = "[geometry]\nnx = 4\nny = 4\nnz = 2\n[sim]\ndt = 0.05\nt_final = 0.2\n";

#[test]
fn validate_default_passes() {
    let d = tempfile::tempdir().unwrap();
    let (code, err) = fsi(d.path(), SMALL, &["validate", "--samples", "10"]);
    assert_eq!(code, 0, "{err}");
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.path().join("out/validate.json")).unwrap()).unwrap();
    assert_eq!(v["report"]["passes"], true);
}

#[test]
fn zero_initial_data_gives_flat_energy() {
    let d = tempfile::tempdir().unwrap();
    let cfg = format!("{SMALL}initial = \"zero\"\n[output]\ncheckpoint_every = 2\n");
    let (code, err) = fsi(d.path(), &cfg, &["simulate"]);
    assert_eq!(code, 0, "{err}");
    let csv = std::fs::read_to_string(d.path().join("out/energy.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# {"));
    assert_eq!(lines.next().unwrap(), "t,E,a_O_cum,divU_work_cum,balance_residual,h_norm");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 5);
    for r in rows {
        let e: f64 = r.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(e, 0.0);
    }
    assert!(d.path().join("out/checkpoint_000002.bin").exists());
    assert!(d.path().join("out/energy.svg").exists());
}

#[test]
fn simulate_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(fsi(a.path(), SMALL, &["simulate"]).0, 0);
    assert_eq!(fsi(b.path(), SMALL, &["simulate"]).0, 0);
    let ra = std::fs::read(a.path().join("out/energy.csv")).unwrap();
    let rb = std::fs::read(b.path().join("out/energy.csv")).unwrap();
    assert_eq!(ra, rb);
}

#[test]
fn resolvent_both_paths_reports_difference() {
    let d = tempfile::tempdir().unwrap();
    let (code, err) = fsi(d.path(), SMALL, &["resolvent", "--xi", "50", "--path", "both"]);
    assert_eq!(code, 0, "{err}");
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.path().join("out/resolvent.json")).unwrap()).unwrap();
    assert!(v["path_difference"].as_f64().unwrap() < 1e-8);
    assert!(v["structured"]["residual"]["relative"].as_f64().unwrap() < 1e-8);
    assert!(v["monolithic"]["residual"]["relative"].as_f64().unwrap() < 1e-8);
}

#[test]
fn stationary_and_transport_outputs() {
    let d = tempfile::tempdir().unwrap();
    let (code, err) = fsi(d.path(), SMALL, &["stationary", "--c", "1", "--nonlinear", "--multistart", "1"]);
    assert_eq!(code, 0, "{err}");
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.path().join("out/stationary.json")).unwrap()).unwrap();
    assert!(!v["nonlinear"]["members"].as_array().unwrap().is_empty());
    let cfg = format!("{SMALL}[ambient]\nkind = \"columnar\"\n");
    let (code, err) = fsi(d.path(), &cfg, &["transport-check", "--k", "20"]);
    assert_eq!(code, 0, "{err}");
    let csv = std::fs::read_to_string(d.path().join("out/transport.csv")).unwrap();
    assert_eq!(csv.lines().nth(1).unwrap(), "epsilon,l2_norm_q,estimate_ratio,diff_prev");
}

#[test]
fn config_errors_exit_2() {
    let d = tempfile::tempdir().unwrap();
    let (code, err) = fsi(d.path(), "[params]\nnu = -1\n", &["validate"]);
    assert_eq!(code, 2);
    assert!(err.contains("params.nu"), "{err}");
    let (code, _) = fsi(d.path(), SMALL, &["resolvent", "--xi", "-1"]);
    assert_eq!(code, 2);
}

#[test]
fn xi_below_minimum_is_a_solver_error() {
    let d = tempfile::tempdir().unwrap();
    let cfg = format!("{SMALL}[ambient]\nkind = \"columnar\"\n");
    let (code, err) = fsi(d.path(), &cfg, &["resolvent", "--xi", "0.5", "--path", "structured"]);
    assert_eq!(code, 3, "{err}");
    assert!(err.contains("xi_min"));
}
