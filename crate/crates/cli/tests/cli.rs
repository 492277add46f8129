use std::path::Path;
use std::process::{Command, Output};

fn kickmap(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kickmap"))
        .args(args)
        .current_dir(dir)
        .env_remove("KICKMAP_OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

const RATE: &str = r#"{"kick_strength": 5, "period": 1, "regime": "rate_equation", "steps": 100,
                       "lattice": {"n_min": -600, "n_max": 600}}"#;

#[test]
fn run_writes_bundle_and_reports_coefficient() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "rate.json", RATE);
    let out = kickmap(&["run", "--config", &cfg, "--out", "res"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let res = dir.path().join("res");
    let series = std::fs::read_to_string(res.join("series.csv")).unwrap();
    assert_eq!(series.lines().next().unwrap(), "step,mean_n,var_n,energy,participation_ratio,edge_mass");
    assert_eq!(series.lines().count(), 102);
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(res.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["schema_version"], "1.0");
    let b = summary["analysis"]["diffusion"]["value"]["b_est"].as_f64().unwrap();
    assert!((b - 6.25).abs() < 1e-6);
    assert!(String::from_utf8_lossy(&out.stdout).contains("B_est"));
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "rate.json", RATE);
    let out = kickmap(
        &["run", "--config", &cfg, "--out", "res", "--k", "2", "--t", "0.5", "--steps", "40", "--seed", "3"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("res/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["kick_strength"], 2.0);
    assert_eq!(summary["config"]["period"], 0.5);
    assert_eq!(summary["config"]["steps"], 40);
    assert_eq!(summary["config"]["seed"], 3);
    let b = summary["analysis"]["diffusion"]["value"]["b_est"].as_f64().unwrap();
    assert!((b - 2.0).abs() < 1e-6);
}

#[test]
fn regime_and_meas_period_flags() {
    let dir = tempfile::tempdir().unwrap();
    let out = kickmap(
        &[
            "run", "--regime", "monte-carlo-measured", "--meas-period", "2", "--steps", "20", "--k", "3",
            "--ensemble", "50", "--out", "mc",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let series = std::fs::read_to_string(dir.path().join("mc/series.csv")).unwrap();
    let steps: Vec<&str> = series.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(steps, vec!["0", "2", "4", "6", "8", "10", "12", "14", "16", "18", "20"]);
}

#[test]
fn environment_sets_default_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "rate.json", RATE);
    let out = Command::new(env!("CARGO_BIN_EXE_kickmap"))
        .args(["run", "--config", &cfg, "--steps", "5"])
        .current_dir(dir.path())
        .env("KICKMAP_OUTPUT_DIR", dir.path().join("from-env"))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("from-env/series.csv").exists());
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for regime in ["classical", "quantum_static_random", "monte_carlo_measured"] {
        let mut outputs = Vec::new();
        for out in ["a", "b"] {
            let o = kickmap(
                &["run", "--regime", regime, "--steps", "30", "--ensemble", "20", "--seed", "5", "--out", out],
                dir.path(),
            );
            assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
            outputs.push(
                ["series.csv", "final_state.csv", "summary.json"]
                    .map(|f| std::fs::read(dir.path().join(out).join(f)).unwrap()),
            );
        }
        assert_eq!(outputs[0], outputs[1], "{regime}");
    }
}

#[test]
fn validation_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(
        dir.path(),
        "bad.json",
        r#"{"kick_strength": 5, "period": -1, "regime": "rate_equation", "steps": 10}"#,
    );
    let out = kickmap(&["validate-config", &bad], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("period"));

    let out = kickmap(&["run", "--config", &bad], dir.path());
    assert_eq!(out.status.code(), Some(1));

    let good = write(dir.path(), "good.json", RATE);
    let out = kickmap(&["validate-config", &good], dir.path());
    assert_eq!(out.status.code(), Some(0));

    let out = kickmap(&["run", "--regime", "bogus"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let out = kickmap(&["run", "--meas-period", "0"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn dynamics_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let small = write(
        dir.path(),
        "small.json",
        r#"{"kick_strength": 5, "period": 1, "regime": "rate_equation", "steps": 500,
            "lattice": {"n_min": -100, "n_max": 100}}"#,
    );
    let out = kickmap(&["run", "--config", &small, "--out", "x"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("edge leakage") && err.contains("[-200, 200]"), "{err}");
    assert!(!dir.path().join("x/series.csv").exists());
}

#[test]
fn sweep_reports_cells_and_partial_failure() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write(
        dir.path(),
        "plan.json",
        r#"{"base": {"kick_strength": 5, "period": 1, "regime": "rate_equation", "steps": 100,
                     "lattice": {"n_min": -400, "n_max": 400}},
            "grid": {"kick_strength": [2, 5]}, "concurrency": 2}"#,
    );
    let out = kickmap(&["sweep", "--plan", &plan, "--out", "sw"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("sweep: 2 cells"));
    let table = std::fs::read_to_string(dir.path().join("sw/sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);

    let partial = write(
        dir.path(),
        "partial.json",
        r#"{"base": {"kick_strength": 5, "period": 1, "regime": "rate_equation", "steps": 100,
                     "lattice": {"n_min": -400, "n_max": 400}},
            "grid": {"kick_strength": [2, 40]}}"#,
    );
    let out = kickmap(&["sweep", "--plan", &partial, "--out", "sw2"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(dir.path().join("sw2/cell-0000/series.csv").exists());

    let empty = write(
        dir.path(),
        "empty.json",
        r#"{"base": {"kick_strength": 5, "period": 1, "regime": "rate_equation", "steps": 10}}"#,
    );
    let out = kickmap(&["sweep", "--plan", &empty, "--out", "sw3"], dir.path());
    assert!(out.status.success());
    let table = std::fs::read_to_string(dir.path().join("sw3/sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 1);
}

#[test]
fn compare_identical_and_mismatched() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "rate.json", RATE);
    assert!(kickmap(&["run", "--config", &cfg, "--out", "r5"], dir.path()).status.success());
    assert!(kickmap(&["run", "--config", &cfg, "--k", "4", "--out", "r4"], dir.path()).status.success());
    let out = kickmap(&["compare", "r5", "r5", "--out", "cmp"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("cmp/comparison.json")).unwrap()).unwrap();
    for r in report["relative"].as_array().unwrap() {
        assert_eq!(r["window_ratio"], 1.0);
    }
    let out = kickmap(&["compare", "r5", "r4", "--out", "cmp2"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bessel_check_prints_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let out = kickmap(&["bessel-check", "--k", "5"], dir.path());
    assert!(out.status.success());
    let d: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(d["norm_defect"].as_f64().unwrap().abs() < 1e-12);
    assert!((d["second_moment"].as_f64().unwrap() - 12.5).abs() < 1e-10);
    let out = kickmap(&["bessel-check", "--k", "-1"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}
