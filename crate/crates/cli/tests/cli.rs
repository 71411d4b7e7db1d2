use serde_json::Value;
use std::path::Path;
use std::process::{Command, Output};

fn geoflow(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geoflow")).args(args).arg("--out").arg(out).output().unwrap()
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

const SHORT: &[&str] = &["flow", "--N", "128", "--t-max", "0.02", "--set", "curve.init=\"ellipse\""];

#[test]
fn rerun_writes_identical_trace() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert_eq!(geoflow(SHORT, &a).status.code(), Some(0));
    assert_eq!(geoflow(SHORT, &b).status.code(), Some(0));
    let mut seq = SHORT.to_vec();
    seq.push("--sequential");
    assert_eq!(geoflow(&seq, &c).status.code(), Some(0));
    let trace = std::fs::read(a.join("trace.csv")).unwrap();
    assert_eq!(trace, std::fs::read(b.join("trace.csv")).unwrap());
    assert_eq!(trace, std::fs::read(c.join("trace.csv")).unwrap());
    assert_eq!(report(&a)["input_hash"], report(&b)["input_hash"]);
}

#[test]
fn config_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[flow]\nc_cfl = -1.0\ntol_geo = 0.0\n").unwrap();
    let out = geoflow(&["flow", "--config", bad.to_str().unwrap()], &dir.path().join("o"));
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("c_cfl") && err.contains("tol_geo"), "{err}");

    let out = geoflow(&["flow", "--set", "flow.no_such_key=1"], &dir.path().join("o"));
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));

    let out = geoflow(&["flow", "--bogus"], &dir.path().join("o"));
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn flag_beats_file_and_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[curve]\ninit = \"circle\"\nN = 64\n\n[flow]\nt_max = 0.5\n").unwrap();
    let out = dir.path().join("o");
    let status = geoflow(&["flow", "--config", cfg.to_str().unwrap(), "--t-max", "0.01"], &out);
    assert_eq!(status.status.code(), Some(0), "{}", String::from_utf8_lossy(&status.stderr));
    let r = report(&out);
    assert_eq!(r["config"]["flow"]["t_max"], 0.01);
    assert_eq!(r["config"]["curve"]["N"], 64);
    assert_eq!(r["provenance"]["flow.t_max"], "flag");
    assert_eq!(r["provenance"]["curve.N"], "file");
    assert_eq!(r["provenance"]["flow.c_cfl"], "default");
    assert!(r["input_hash"].as_str().unwrap().starts_with("sha256:"));
}

#[test]
fn helix_prints_golden_ratio_limit() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("helix.csv");
    let out = Command::new(env!("CARGO_BIN_EXE_geoflow"))
        .args(["helix", "--K", "-1", "--k0", "1", "--tau0", "1", "--t-end", "20", "--dt", "1e-3", "--out"])
        .arg(&file)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&file).unwrap();
    let last = text.lines().last().unwrap();
    let tau: f64 = last.split(',').nth(2).unwrap().parse().unwrap();
    assert!((tau - (1.0 + 5f64.sqrt()) / 2.0).abs() < 1e-6, "{tau}");
}
