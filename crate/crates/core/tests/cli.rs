//! End-to-end checks of the `nonstat-dyn` binary.

use std::path::Path;
use std::process::{Command, Output};

fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nonstat-dyn"))
        .args(args)
        .env("NONSTAT_DYN_OUT", out)
        .output()
        .expect("binary runs")
}

#[test]
fn invariant_run_succeeds_and_writes_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(tmp.path(), &["invariant", "--cells", "128"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = tmp.path().join("invariant");
    assert!(dir.join("manifest.json").is_file());
    let csv = std::fs::read_to_string(dir.join("density.csv")).unwrap();
    assert!(csv.starts_with("# manifest: "));
}

#[test]
fn run_prefix_is_an_alias() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(tmp.path(), &["run", "invariant", "--cells", "64"]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn negative_delta_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(tmp.path(), &["stability", "--deltas", "0.01,-0.02"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("deltas[1]"), "{err}");
}

#[test]
fn unknown_config_field_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "seed = 3\nbogus_field = 1\n").unwrap();
    let o = run(tmp.path(), &["invariant", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus_field"));
}

#[test]
fn hypothesis_violation_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(tmp.path(), &["invariant", "--gamma-hat", "0.9"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["evolve", "--cells", "128", "--set", "evolve.steps=50"];
    let dir = tmp.path().join("evolve");
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        let o = run(tmp.path(), &args);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let mut files: Vec<_> = std::fs::read_dir(&dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.file_name().unwrap() != "timings.json")
            .collect();
        files.sort();
        snapshots.push(files.iter().map(|p| std::fs::read(p).unwrap()).collect::<Vec<_>>());
    }
    assert!(!snapshots[0].is_empty());
    assert_eq!(snapshots[0], snapshots[1]);
}
