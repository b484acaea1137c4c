use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn phi4(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phi4")).args(args).output().expect("run phi4")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stderr)))
}

#[test]
fn enumerate_small_delta_has_one_w_tree() {
    let out = phi4(&["enumerate", "--delta", "2/5", "--allow-integer-orders"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["sizes"]["W"], 1);
}

#[test]
fn inadmissible_delta_is_a_config_error() {
    let out = phi4(&["enumerate", "--delta", "1/3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("inadmissible delta"));
    // Integer orders further down the tree list are refused without the flag.
    assert_eq!(phi4(&["enumerate", "--delta", "2/5"]).status.code(), Some(2));
}

#[test]
fn enumerate_output_is_stable() {
    let a = phi4(&["enumerate", "--delta", "3/10", "--format", "json"]);
    let b = phi4(&["enumerate", "--delta", "3/10", "--format", "json"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(json(&a)["sizes"]["N"], 211);
}

#[test]
fn enumerate_text_and_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = phi4(&["enumerate", "--delta", "9/20", "--format", "text", "--out", d]);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(dir.path().join("universe.txt")).unwrap();
    assert!(text.starts_with("delta = 9/20, d = 1"));
    assert!(text.contains("W (1)"));
}

#[test]
fn algebra_suite_passes() {
    let out = phi4(&["verify", "--suite", "algebra", "--delta", "3/10", "--maps", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let doc = json(&out);
    assert_eq!(doc["algebra"]["passed"], true);
    assert!(doc["algebra"]["checked"].as_u64().unwrap() > 1000);
}

#[test]
fn path_suite_on_zero_noise_passes() {
    let out = phi4(&["verify", "--suite", "path", "--noise", "zero", "--grid", "coarse", "--delta", "9/20", "--samples", "10"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&out)["path"]["passed"], true);
}

#[test]
fn corrupted_lift_file_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("ct.json");
    std::fs::write(&f, "{ not json").unwrap();
    let lift = format!("counterterm:{}", f.display());
    let out = phi4(&["verify", "--suite", "path", "--grid", "coarse", "--delta", "9/20", "--noise", "smooth", "--lift", &lift]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("parse error") && err.contains("ct.json"), "{err}");
}

#[test]
fn bad_flags_are_config_errors() {
    let grid = ["verify", "--suite", "path", "--grid", "coarse", "--delta", "9/20"];
    let mut args = grid.to_vec();
    args.extend(["--tol", "nope=1"]);
    assert_eq!(phi4(&args).status.code(), Some(2));
    let mut args = grid.to_vec();
    args.extend(["--noise", "pink"]);
    assert_eq!(phi4(&args).status.code(), Some(2));
    assert_eq!(phi4(&["solve", "--grid", "coarse", "--delta", "9/20", "--boundary", "sideways"]).status.code(), Some(2));
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn flat_and_json_configs_agree() {
    let dir = tempfile::tempdir().unwrap();
    let flat = write(dir.path(), "run.conf", "delta = 9/20\ngrid = coarse\nnoise = smooth:0.5\nsamples = 5\n[tol]\nchen = 1e-9\n");
    let js = write(dir.path(), "run.json", r#"{"delta": "9/20", "grid": "coarse", "noise": "smooth:0.5", "samples": 5, "tol": {"chen": 1e-9}}"#);
    let a = phi4(&["verify", "--suite", "path", "--config", &flat]);
    let b = phi4(&["verify", "--suite", "path", "--config", &js]);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(json(&a)["config"]["tolerances"]["chen"], 1e-9);
    // Flags override the file.
    let c = phi4(&["verify", "--suite", "path", "--config", &flat, "--tol", "chen=1e-7"]);
    assert_eq!(json(&c)["config"]["tolerances"]["chen"], 1e-7);
    let bad = write(dir.path(), "bad.conf", "colour = blue\n");
    assert_eq!(phi4(&["verify", "--suite", "path", "--config", &bad]).status.code(), Some(2));
}

#[test]
fn solve_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let args = ["solve", "--grid", "coarse", "--delta", "9/20", "--noise", "smooth", "--boundary", "trace:2:1", "--radii", "0.25,0.5"];
    let a = phi4(&args);
    let mut with_out = args.to_vec();
    with_out.extend(["--out", d]);
    let b = phi4(&with_out);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(std::fs::read(dir.path().join("solve.json")).unwrap(), a.stdout);
    assert!(dir.path().join("remainder.bin").exists());
    let norms = json(&a)["run"]["norms"].as_array().unwrap().len();
    assert_eq!(norms, 2);
}

#[test]
fn order_scan_emits_slope_rows() {
    let out = phi4(&["scan", "--kind", "order", "--grid", "coarse", "--delta", "9/20", "--max-xi", "2", "--samples", "8", "--noise", "smooth"]);
    assert!(matches!(out.status.code(), Some(0) | Some(1)), "{}", String::from_utf8_lossy(&out.stderr));
    let doc = json(&out);
    let rows = doc["rows"].as_array().unwrap();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.get("slope").is_some() && r.get("target").is_some()));
}

#[test]
fn unstable_grid_is_refused() {
    let out = phi4(&["solve", "--grid", "0.1,0.1,3", "--delta", "9/20"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unstable"));
}

#[test]
fn blow_up_is_a_numerical_abort() {
    let out = phi4(&["solve", "--grid", "coarse", "--delta", "9/20", "--noise", "smooth", "--boundary", "const:1e7"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("numerical abort"));
}
