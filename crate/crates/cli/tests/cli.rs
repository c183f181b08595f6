use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn hmcf() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hmcf"));
    cmd.env_remove("HMCF_OUTPUT_DIR").env_remove("RUST_LOG");
    cmd
}

fn run(args: &[&str]) -> Output {
    hmcf().args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn dir_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every regular file in `dir`, sorted by name, with its bytes.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

const GRID_ARGS: &[&str] = &[
    "evolve-grid",
    "--initial",
    "x1^2 + x2^2 + 4*x3^2 - 0.25",
    "--box=-1,-1,-0.5:1,1,0.5",
    "--h",
    "0.125",
    "--T",
    "0.02",
    "--snap-every",
    "0.01",
];

const VALUE_ARGS: &[&str] = &[
    "value-function",
    "--terminal",
    "x1^2 + x2^2 - x3",
    "--x0=0.3,0.1,0.2",
    "--T",
    "0.05",
    "--paths",
    "400",
    "--dt",
    "0.005",
    "--policy",
    "both",
    "--seed",
    "11",
    "--dump-paths",
];

fn run_in(args: &[&str], dir: &Path, threads: &str) -> Vec<(String, Vec<u8>)> {
    let out = hmcf()
        .args(args)
        .args(["--out", dir_str(dir)])
        .env("RAYON_NUM_THREADS", threads)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    snapshot(dir)
}

#[test]
fn named_curvature_of_koranyi_ball() {
    let v = stdout_json(&run(&["named-curvature", "--surface", "koranyi_ball", "--R", "1", "--point", "1,0,0"]));
    assert!((v["curvature"].as_f64().unwrap() - 3.0).abs() < 1e-12);
}

#[test]
fn geom_reports_step_two_for_heisenberg() {
    let v = stdout_json(&run(&["geom", "-g", "heisenberg(1)"]));
    assert_eq!(v["hormander"]["step"], 2);
}

#[test]
fn curvature_matches_paraboloid_by_hand() {
    // u = z - (x^2 + y^2)/2 at (1,0,0): Xu = -x - y/2 = -1, Yu = -y + x/2 = 1/2.
    let v = stdout_json(&run(&["curvature", "--field", "x3 - 0.5*(x1^2 + x2^2)", "--point=1,0,0"]));
    let grad = v["horizontal_gradient"].as_array().unwrap();
    assert!((grad[0].as_f64().unwrap() + 1.0).abs() < 1e-14);
    assert!((grad[1].as_f64().unwrap() - 0.5).abs() < 1e-14);
    assert_eq!(v["characteristic"], false);
}

#[test]
fn char_scan_finds_the_two_poles() {
    let v = stdout_json(&run(&[
        "char-scan",
        "--field",
        "euclidean_ball:1",
        "--sampler",
        "sphere:1:12:16",
    ]));
    let hits = v["hits"].as_array().unwrap();
    assert_eq!(hits.len(), 2, "{v}");
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["geom", "-g", "not-a-frame"]).status.code(), Some(2));
    assert_eq!(run(&["curvature", "--field", "x1 +* x2", "--point", "0,0,0"]).status.code(), Some(2));
    assert_eq!(run(&["curvature", "--point", "0,0,0"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));

    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "evolve-grid",
        "--initial",
        "sqrt(x1)",
        "--box=-1,-1,-1:1,1,1",
        "--h",
        "0.25",
        "--T",
        "0.01",
        "--out",
        dir_str(tmp.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn evolve_grid_writes_snapshots_and_provenance() {
    let tmp = tempfile::tempdir().unwrap();
    let files = run_in(GRID_ARGS, tmp.path(), "1");
    let names: Vec<&str> = files.iter().map(|(n, _)| n.as_str()).collect();
    for want in [
        "VERSION",
        "config.json",
        "metadata.json",
        "snapshot_0000.csv",
        "snapshot_0002.csv",
        "zero_level_0000.csv",
    ] {
        assert!(names.contains(&want), "missing {want} in {names:?}");
    }
    let version = fs::read_to_string(tmp.path().join("VERSION")).unwrap();
    assert!(version.starts_with("hmcf "));

    let snap = fs::read_to_string(tmp.path().join("snapshot_0000.csv")).unwrap();
    let mut lines = snap.lines();
    assert_eq!(lines.next(), Some("t,x1,x2,x3,u"));
    assert_eq!(lines.count(), 17 * 17 * 9);

    // The recorded configuration reproduces the run.
    let again = tempfile::tempdir().unwrap();
    let out = hmcf()
        .args(["evolve-grid", "--config"])
        .arg(tmp.path().join("config.json"))
        .args(["--out", dir_str(again.path())])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let first = snapshot(tmp.path());
    let second = snapshot(again.path());
    assert_eq!(first.len(), second.len());
    for ((na, a), (nb, b)) in first.iter().zip(&second) {
        assert_eq!(na, nb);
        assert!(a == b, "{na} differs after replaying config.json");
    }
}

#[test]
fn grid_output_is_independent_of_thread_count() {
    let one = tempfile::tempdir().unwrap();
    let two = tempfile::tempdir().unwrap();
    assert_eq!(run_in(GRID_ARGS, one.path(), "1"), run_in(GRID_ARGS, two.path(), "2"));
}

#[test]
fn value_output_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let first = run_in(VALUE_ARGS, a.path(), "1");
    assert_eq!(first, run_in(VALUE_ARGS, b.path(), "1"));
    assert_eq!(first, run_in(VALUE_ARGS, c.path(), "2"));

    let report: Value = serde_json::from_slice(&fs::read(a.path().join("value.json")).unwrap()).unwrap();
    assert!(report["value"]["value"].as_f64().unwrap().is_finite());
    assert_eq!(report["vp"].as_array().unwrap().len(), 5);
    let endpoints = fs::read_to_string(a.path().join("endpoints.csv")).unwrap();
    assert!(endpoints.lines().count() > 400);
}

#[test]
fn output_dir_env_overrides_flag() {
    let flag = tempfile::tempdir().unwrap();
    let env = tempfile::tempdir().unwrap();
    let out = hmcf()
        .args(["evolve-rotational", "--T", "0.01", "--h", "0.0625", "--rmax", "1"])
        .args(["--out", dir_str(flag.path())])
        .env("HMCF_OUTPUT_DIR", env.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(env.path().join("profile.csv").is_file());
    assert!(env.path().join("config.json").is_file());
    assert!(!flag.path().join("profile.csv").exists());
}

#[test]
fn config_file_values_are_used_and_flags_win() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path: PathBuf = tmp.path().join("run.json");
    fs::write(
        &cfg_path,
        r#"{ "geometry": "grusin", "field": "x2 - x1^2", "point": [1.0, 1.0] }"#,
    )
    .unwrap();
    let v = stdout_json(&hmcf().arg("curvature").arg("--config").arg(&cfg_path).output().unwrap());
    assert_eq!(v["geometry"], "grusin");

    let v = stdout_json(
        &hmcf()
            .args(["curvature", "--point", "2,4", "--config"])
            .arg(&cfg_path)
            .output()
            .unwrap(),
    );
    assert_eq!(v["point"][0].as_f64(), Some(2.0));

    fs::write(&cfg_path, r#"{ "geometry": "grusin", "bogus": 1 }"#).unwrap();
    let out = hmcf().arg("curvature").arg("--config").arg(&cfg_path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
