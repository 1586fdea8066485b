//! End-to-end tests of the `ccma` binary: exit codes, artifacts, manifests,
//! and bitwise reproducibility.

use std::path::Path;
use std::process::{Command, Output};

fn ccma(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccma"))
        .args(args)
        .output()
        .expect("failed to spawn ccma")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("process terminated by signal")
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn solve_fk_writes_state_report_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let res = ccma(&["solve-fk", "--scene", "ccma-4dof-reduced", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&res), 0, "stderr: {}", String::from_utf8_lossy(&res.stderr));
    let state = read(&out.join("state.csv"));
    assert!(state.starts_with("# schema: ccma.state.v1\n"));
    assert!(state.contains("platform") || state.lines().count() > 2);
    let report: serde_json::Value =
        serde_json::from_str(&read(&out.join("solve_report.json"))).unwrap();
    assert_eq!(report["converged"], serde_json::Value::Bool(true));
    let manifest: serde_json::Value =
        serde_json::from_str(&read(&out.join("manifest.json"))).unwrap();
    assert_eq!(manifest["command"], "solve-fk");
    assert_eq!(manifest["scene"], "ccma-4dof-reduced");
}

#[test]
fn unknown_scene_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let res = ccma(&[
        "solve-fk",
        "--scene",
        "ccma-not-a-scene",
        "--out",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 1);
}

#[test]
fn malformed_scene_file_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ this is not a scene").unwrap();
    let res = ccma(&[
        "solve-fk",
        "--scene",
        bad.to_str().unwrap(),
        "--out",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 1);
}

#[test]
fn corrupt_layer_exits_three_and_names_the_layer() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v");
    let res = ccma(&[
        "validate-grad",
        "--scene",
        "ccma-4dof-reduced",
        "--corrupt",
        "jac_s",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 3);
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert!(stderr.contains("jac_s"), "stderr: {stderr}");
    assert!(read(&out.join("validate.csv")).contains("fail"));
}

#[test]
fn validate_grad_passes_clean() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v");
    let res = ccma(&[
        "validate-grad",
        "--scene",
        "ccma-4dof-complete",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "stderr: {}", String::from_utf8_lossy(&res.stderr));
    let csv = read(&out.join("validate.csv"));
    assert!(csv.starts_with("# schema: ccma.validate.v1\n"));
    assert!(!csv.contains(",fail"));
}

#[test]
fn track_execute_round_trip_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let wps = dir.path().join("wps.json");
    // home of ccma-4dof-reduced is (0, 0, 0.45); a short two-waypoint hop
    std::fs::write(&wps, "[[0.0, 0.02, 0.45, 0.0, 0.0, 0.0], [0.0, 0.0, 0.45, 0.0, 0.0, 0.0]]")
        .unwrap();
    let t1 = dir.path().join("t1");
    let res = ccma(&[
        "track",
        "--scene",
        "ccma-4dof-reduced",
        "--waypoints",
        wps.to_str().unwrap(),
        "--out",
        t1.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "stderr: {}", String::from_utf8_lossy(&res.stderr));
    let track1 = read(&t1.join("track.csv"));
    assert!(track1.starts_with("# schema: ccma.track.v1\n"));

    // rerunning the same command reproduces the CSV bitwise
    let t2 = dir.path().join("t2");
    let res = ccma(&[
        "track",
        "--scene",
        "ccma-4dof-reduced",
        "--waypoints",
        wps.to_str().unwrap(),
        "--out",
        t2.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0);
    assert_eq!(track1, read(&t2.join("track.csv")), "track output is not deterministic");

    // execute the tracked trajectory twice with the same seed
    let e1 = dir.path().join("e1");
    let e2 = dir.path().join("e2");
    for out in [&e1, &e2] {
        let res = ccma(&[
            "execute",
            "--scene",
            "ccma-4dof-reduced",
            "--track",
            t1.join("track.csv").to_str().unwrap(),
            "--noise-sigma",
            "0.005",
            "--seed",
            "11",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&res), 0, "stderr: {}", String::from_utf8_lossy(&res.stderr));
    }
    assert_eq!(
        read(&e1.join("execute.csv")),
        read(&e2.join("execute.csv")),
        "execute output is not deterministic for a fixed seed"
    );
    // a different seed gives different noise
    let e3 = dir.path().join("e3");
    let res = ccma(&[
        "execute",
        "--scene",
        "ccma-4dof-reduced",
        "--track",
        t1.join("track.csv").to_str().unwrap(),
        "--noise-sigma",
        "0.005",
        "--seed",
        "12",
        "--out",
        e3.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0);
    assert_ne!(read(&e1.join("execute.csv")), read(&e3.join("execute.csv")));
}

#[test]
fn missing_waypoint_file_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let res = ccma(&[
        "track",
        "--scene",
        "ccma-4dof-reduced",
        "--waypoints",
        "/nonexistent/wps.json",
        "--out",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 1);
}

#[test]
fn scene_export_round_trips_through_solve() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("scenes");
    let res = ccma(&["scene", "--scene", "ccma-6dof-sym", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&res), 0);
    let exported = out.join("ccma-6dof-sym.json");
    assert!(exported.exists());
    // the exported file loads and solves like the canonical scene
    let res = ccma(&[
        "solve-fk",
        "--scene",
        exported.to_str().unwrap(),
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "stderr: {}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn bench_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench");
    let res = ccma(&[
        "bench",
        "--scene",
        "ccma-4dof-reduced",
        "--reps",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "stderr: {}", String::from_utf8_lossy(&res.stderr));
    let csv = read(&out.join("bench.csv"));
    assert!(csv.starts_with("# schema: ccma.bench.v1\n"));
    assert!(csv.contains("ccma-4dof-reduced"));
}
