use std::path::{Path, PathBuf};

use disp2d::run::{run, write_atomic, Command, RunConfig};
use disp2d::Error;

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn field_of(err: Error) -> String {
    match err {
        Error::Config { field, .. } => field,
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn bundled_configs_parse() {
    for name in ["gaussian-well.json", "deep-well-scan.json", "two-well-zero-mass.json", "free.json"] {
        let cfg = RunConfig::load(&bundled(name)).unwrap();
        assert!(cfg.potential.is_some() && cfg.grid.is_some(), "{name}");
    }
}

#[test]
fn commands_round_trip_by_name() {
    for c in Command::ALL {
        assert_eq!(c.name().parse::<Command>().unwrap(), c);
    }
    assert_eq!(field_of("evolution".parse::<Command>().unwrap_err()), "command");
}

#[test]
fn hash_ignores_output_dir_but_not_seed() {
    let cfg = RunConfig::load(&bundled("free.json")).unwrap();
    let moved = RunConfig { output_dir: Some("elsewhere".into()), ..cfg.clone() };
    assert_eq!(cfg.hash(), moved.hash());
    assert_eq!(cfg.hash().len(), 16);
    let reseeded = RunConfig { seed: cfg.seed + 1, ..cfg.clone() };
    assert_ne!(cfg.hash(), reseeded.hash());
}

#[test]
fn parse_errors_name_the_field() {
    let cases = [
        (r#"{"grid": {"kind": "polar", "n_r": -3, "n_theta": 8, "r_max": 4}}"#, "grid.n_r"),
        (r#"{"grid": {"kind": "cartesian", "n": 8, "half_width": 2, "n_r": 4}}"#, "grid"),
        (r#"{"lowenergy": {"tau": 1e-8}}"#, "lowenergy"),
        (r#"{"evolution": {"t_list": [1], "lambda1": "x", "lambda_max": 1}}"#, "evolution.lambda1"),
        (r#"{"seed": -1}"#, "seed"),
    ];
    for (text, field) in cases {
        let f = field_of(RunConfig::from_json(text).unwrap_err());
        assert!(f.starts_with(field), "{text}: {f}");
    }
}

#[test]
fn commands_report_missing_sections() {
    let dir = tempfile::tempdir().unwrap();
    let empty = RunConfig::from_json("{}").unwrap();
    assert_eq!(field_of(run(Command::Classify, &empty, dir.path()).unwrap_err()), "potential");
    assert_eq!(field_of(run(Command::Evolve, &empty, dir.path()).unwrap_err()), "evolution");
    let no_grid = RunConfig::from_json(r#"{"potential": {"family": {"kind": "gaussian"}, "amplitude": 1, "length_scale": 1}}"#).unwrap();
    assert_eq!(field_of(run(Command::Expand, &no_grid, dir.path()).unwrap_err()), "grid");
}

#[test]
fn zero_potential_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::load(&bundled("free.json")).unwrap();
    let err = run(Command::Classify, &cfg, dir.path()).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn atomic_write_replaces_contents() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.csv");
    write_atomic(&path, b"one").unwrap();
    write_atomic(&path, b"two").unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), b"two");
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}
