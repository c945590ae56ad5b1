use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn disp2d(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_disp2d"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("DISP2D_SEED")
        .env_remove("DISP2D_OUT")
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn classify_gaussian_well_is_regular() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("gaussian-well.json");
    let o = disp2d(&["classify", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let report = json(&dir.path().join("classify.json"));
    assert_eq!(report["regular"], Value::Bool(true));
    assert!(report["sigma_min"].as_f64().unwrap() > 0.0);
    let manifest = json(&dir.path().join("manifest.json"));
    assert_eq!(manifest["status"], "ok");
    assert_eq!(manifest["config_hash"], report["config_hash"]);
}

#[test]
fn free_decay_exponent_is_minus_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("free.json");
    let o = disp2d(&["decay", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = json(&dir.path().join("decay.json"));
    let methods = summary["methods"].as_array().unwrap();
    assert_eq!(methods.len(), 1);
    assert_eq!(methods[0]["method"], "free");
    assert!((methods[0]["exponent"].as_f64().unwrap() + 1.0).abs() <= 0.02);
}

#[test]
fn every_csv_row_carries_the_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("free.json");
    assert!(disp2d(&["decay", "--config", cfg.to_str().unwrap()], dir.path()).status.success());
    let hash = json(&dir.path().join("decay.json"))["config_hash"].as_str().unwrap().to_string();
    let text = fs::read_to_string(dir.path().join("decay.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "config_hash,t,value,method,converged");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 10);
    assert!(rows.iter().all(|r| r.starts_with(&format!("{hash},"))));
}

#[test]
fn negative_grid_size_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(config("gaussian-well.json")).unwrap().replace("\"n_r\": 16", "\"n_r\": -4");
    let bad = dir.path().join("bad.json");
    fs::write(&bad, text).unwrap();
    let out = dir.path().join("out");
    let o = disp2d(&["classify", "--config", bad.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("grid.n_r"), "{}", stderr(&o));
    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["status"], "error");
    assert_eq!(manifest["exit_code"], 2);
}

#[test]
fn unknown_command_prints_usage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("free.json");
    let o = disp2d(&["frobnicate", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("usage") && err.contains("born-chain"), "{err}");
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn missing_section_is_a_named_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("deep-well-scan.json");
    let o = disp2d(&["evolve", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("evolution"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"potential": {"family": {"kind": "zero"}, "amplitude": 0, "length_scale": 1}, "sede": 3}"#).unwrap();
    let o = disp2d(&["classify", "--config", bad.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sede"), "{}", stderr(&o));
}

#[test]
fn seeded_sweeps_are_byte_identical() {
    let cfg = config("free.json");
    let run = |seed: &str| {
        let dir = tempfile::tempdir().unwrap();
        let o = disp2d(&["born-chain", "--config", cfg.to_str().unwrap(), "--seed", seed], dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read(dir.path().join("born_chain.csv")).unwrap()
    };
    let a = run("11");
    assert_eq!(a, run("11"));
    assert_ne!(a, run("12"));
}

#[test]
fn output_directory_can_come_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("free.json");
    let o = Command::new(env!("CARGO_BIN_EXE_disp2d"))
        .args(["decay", "--config", cfg.to_str().unwrap()])
        .env("DISP2D_OUT", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("decay.csv").exists());
}
