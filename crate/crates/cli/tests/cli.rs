//! End-to-end checks of the binary: output formats, exit codes and
//! determinism, driven through the shipped example scenarios.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_delay-lqr"))
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

#[test]
fn simulate_minimal_scenario_writes_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("s.json");
    fs::write(
        &sc,
        r#"{
            "version": 1,
            "system": {"n":1,"r":1,"a":[[-1.0]],"b":[[0.0]],"d":[[1.0]],"h":1.0},
            "history": {"kind":"constant","value":[2.5]},
            "grid": {"n_theta": 8, "dt": 0.015625, "horizon": 2.0}
        }"#,
    )
    .unwrap();
    let out = run(&[
        "simulate",
        "--scenario",
        sc.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "t,x1");
    let first = lines.next().unwrap();
    assert!(first.starts_with("0.000000,"), "first row {first}");
    let x0: f64 = first.split(',').nth(1).unwrap().parse().unwrap();
    assert!((x0 - 2.5).abs() < 1e-12);
    // 2.0 / 0.015625 = 128 steps + initial row + header
    assert_eq!(csv.lines().count(), 130);
}

#[test]
fn plant_scenario_row_count_matches_sampling() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "simulate",
        "--scenario",
        scenario("plant_bench.json").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let csv = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    // 1800 s at dt = 0.5: 3600 steps + 1 initial row (+ header)
    assert_eq!(csv.lines().count(), 3602);
}

#[test]
fn malformed_scenario_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("bad.json");
    fs::write(&sc, "{ this is not json").unwrap();
    let out = run(&[
        "simulate",
        "--scenario",
        sc.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("schema"), "stderr: {err}");
}

#[test]
fn unstable_init_exits_3_and_names_the_decay_fit() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("unstable.json");
    fs::write(
        &sc,
        r#"{
            "version": 1,
            "system": {"n":1,"r":1,"a":[[1.0]],"b":[[0.0]],"d":[[0.001]],"h":0.5},
            "weights": {"q":[[1.0]],"r":[[1.0]]},
            "grid": {"n_theta": 16, "dt": 0.0078125}
        }"#,
    )
    .unwrap();
    let out = run(&[
        "synthesize",
        "--scenario",
        sc.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("decay fit"), "stderr: {err}");
}

#[test]
fn synthesize_are_scenario_reports_the_fixed_point() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "synthesize",
        "--scenario",
        scenario("are_scalar.json").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["status"], "Converged");
    let gain = report["gamma0"][0][0].as_f64().unwrap();
    assert!((gain - (1.0 - 2.0_f64.sqrt())).abs() < 1e-4, "gain {gain}");
    assert!(dir.path().join("gamma1.csv").exists());
    assert!(dir.path().join("pi1.csv").exists());
    assert!(dir.path().join("pi2.csv").exists());
}

#[test]
fn converged_input_exits_after_one_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let out1 = dir.path().join("first");
    let out = run(&[
        "synthesize",
        "--scenario",
        scenario("are_scalar.json").to_str().unwrap(),
        "--out",
        out1.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out1.join("report.json")).unwrap()).unwrap();
    let gain = report["gamma0"][0][0].as_f64().unwrap();

    // feed the converged gain back in as the initial law
    let mut sc: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(scenario("are_scalar.json")).unwrap(),
    )
    .unwrap();
    sc["law"] = serde_json::json!({"gamma0": [[gain]]});
    let sc_path = dir.path().join("warm.json");
    fs::write(&sc_path, serde_json::to_string(&sc).unwrap()).unwrap();
    let out2 = dir.path().join("second");
    let out = run(&[
        "synthesize",
        "--scenario",
        sc_path.to_str().unwrap(),
        "--out",
        out2.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out2.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["status"], "Converged");
    assert_eq!(report["iterations"].as_array().unwrap().len(), 1);
}

#[test]
fn verify_distributed_scenario_reports_small_residuals() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "verify",
        "--scenario",
        scenario("distributed_2x2.json").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("verify.json")).unwrap())
            .unwrap();
    assert!(report["lyapunov"]["dyn_res"].as_f64().unwrap() < 1e-3);
    assert!(report["lyapunov"]["sym_res"].as_f64().unwrap() < 1e-6);
    assert!(report["max_relative_mismatch"].as_f64().unwrap() < 1e-2);
    // a non-optimal law keeps a clearly nonzero algebraic residual
    assert!(report["riccati"]["r1"].as_f64().unwrap() > 1e-3);
    assert!(dir.path().join("u_matrix.csv").exists());
}

#[test]
fn bounds_reference_chain_and_invalid_delta_warning() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "bounds",
        "--scenario",
        scenario("ross_bounds.json").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("bounds.json")).unwrap())
            .unwrap();
    let delta = report["delta"].as_f64().unwrap();
    assert!((delta - 3.0482e-23).abs() / 3.0482e-23 < 1e-3, "delta {delta}");

    // alpha/t* combination that breaks the premise: warn, exit 0
    let sc = dir.path().join("invalid.json");
    fs::write(
        &sc,
        r#"{
            "version": 1,
            "bounds": {
                "alpha": 0.1, "t_star": 1.0, "phi0_norm": 10.0, "lambda_min_q": 1.0,
                "intermediates": {"h": 1.0, "norm_a1": 0.0, "g": 0.0, "l": 1e-6, "c2": 1e-6}
            }
        }"#,
    )
    .unwrap();
    let out = run(&[
        "bounds",
        "--scenario",
        sc.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("warning"), "stdout: {stdout}");
}

#[test]
fn outputs_are_byte_identical_across_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let st = run(&[
            "verify",
            "--scenario",
            scenario("distributed_2x2.json").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(st.status.success());
    }
    for name in ["verify.json", "u_matrix.csv"] {
        let a = fs::read(out_a.join(name)).unwrap();
        let b = fs::read(out_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between reruns");
    }
}

#[test]
fn bench_short_run_orders_controllers() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("bench.json");
    // shortened horizon to keep the test quick; covers the first ramp+jump
    fs::write(
        &sc,
        r#"{
            "version": 1,
            "benchmark": {"t_end": 300.0, "n_theta": 16, "steps_per_delay": 32}
        }"#,
    )
    .unwrap();
    let out = run(&[
        "bench",
        "--scenario",
        sc.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap())
            .unwrap();
    assert!(report["optimal"]["saturation_respected"].as_bool().unwrap());
    assert!(report["pi"]["saturation_respected"].as_bool().unwrap());
    // hardware figures present as context
    assert!(report["hardware_reference"]["iae_optimal"].as_f64().unwrap() > 0.0);
    assert!(dir.path().join("optimal.csv").exists());
    assert!(dir.path().join("pi.csv").exists());
}
