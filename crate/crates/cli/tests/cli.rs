// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn snnsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_snnsim")).args(args).output().expect("binary runs")
}

fn generate(dir: &Path, extra: &[&str]) {
    let out = dir.to_str().unwrap();
    let mut args = vec!["generate", "--seed", "11", "--out", out, "--count", "3"];
    args.extend_from_slice(extra);
    let o = snnsim(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

fn run_args<'a>(dir: &'a str, inputs: &'a str) -> Vec<&'a str> {
    vec!["run", "--model", dir, "--input", inputs, "--deterministic-output"]
}

#[test]
fn compare_is_identical_and_deterministic() {
    let t = tempfile::tempdir().unwrap();
    generate(t.path(), &["--labels"]);
    let dir = t.path().to_str().unwrap();
    let inputs = t.path().join("inputs.bin");
    let inputs = inputs.to_str().unwrap();
    let mut a = run_args(dir, inputs);
    a.extend(["--workers", "1"]);
    let mut b = run_args(dir, inputs);
    b.extend(["--workers", "3"]);
    let (one, three) = (snnsim(&a), snnsim(&b));
    assert_eq!(one.status.code(), Some(0));
    assert_eq!(one.stdout, three.stdout);
    let text = String::from_utf8(one.stdout).unwrap();
    assert!(text.contains("verdict: identical"));
    assert!(text.contains("accuracy: "));
    assert!(!text.contains("generated_unix"));
}

#[test]
fn csv_report_written_to_file() {
    let t = tempfile::tempdir().unwrap();
    generate(t.path(), &[]);
    let dir = t.path().to_str().unwrap();
    let inputs = t.path().join("inputs.bin");
    let report = t.path().join("r.csv");
    let mut a = run_args(dir, inputs.to_str().unwrap());
    a.extend(["--mode", "eventdriven", "--emit", "csv", "--report", report.to_str().unwrap()]);
    assert_eq!(snnsim(&a).status.code(), Some(0));
    let csv = fs::read_to_string(&report).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("image,label,predicted"));
}

#[test]
fn zero_input_reports_zero_compute() {
    let t = tempfile::tempdir().unwrap();
    generate(t.path(), &["--density", "0"]);
    let dir = t.path().to_str().unwrap();
    let inputs = t.path().join("inputs.bin");
    let mut a = run_args(dir, inputs.to_str().unwrap());
    a.extend(["--mode", "eventdriven"]);
    let o = snnsim(&a);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    let cycles: Vec<&str> = text.lines().filter(|l| l.starts_with("cycles: ")).collect();
    assert_eq!(cycles.len(), 3);
    assert!(cycles.iter().all(|l| l.contains(" compute=0 ")), "{text}");
    assert_eq!(text.matches("synops: 0\n").count(), 4);
}

#[test]
fn truncated_blob_is_a_load_error() {
    let t = tempfile::tempdir().unwrap();
    generate(t.path(), &[]);
    let blob = t.path().join("layer00.bin");
    let mut bytes = fs::read(&blob).unwrap();
    bytes.pop();
    fs::write(&blob, bytes).unwrap();
    let inputs = t.path().join("inputs.bin");
    let o = snnsim(&run_args(t.path().to_str().unwrap(), inputs.to_str().unwrap()));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("layer 0"));
}

#[test]
fn bad_config_exits_three() {
    let t = tempfile::tempdir().unwrap();
    generate(t.path(), &[]);
    let cfg = t.path().join("sim.toml");
    fs::write(&cfg, "[epa]\npe_rows = 0\n").unwrap();
    let inputs = t.path().join("inputs.bin");
    let mut a = run_args(t.path().to_str().unwrap(), inputs.to_str().unwrap());
    a.extend(["--config", cfg.to_str().unwrap()]);
    assert_eq!(snnsim(&a).status.code(), Some(3));
}

#[test]
fn config_overrides_change_cycle_counts() {
    let t = tempfile::tempdir().unwrap();
    generate(t.path(), &[]);
    let cfg = t.path().join("sim.toml");
    fs::write(&cfg, "[epa]\npe_rows = 2\npe_cols = 2\noverhead_cycles = 5\n").unwrap();
    let inputs = t.path().join("inputs.bin");
    let dir = t.path().to_str().unwrap();
    let mut a = run_args(dir, inputs.to_str().unwrap());
    a.extend(["--emit", "csv"]);
    let base = snnsim(&a);
    a.extend(["--config", cfg.to_str().unwrap()]);
    let slow = snnsim(&a);
    assert_eq!(slow.status.code(), Some(0));
    assert_ne!(base.stdout, slow.stdout);
    assert!(String::from_utf8(slow.stdout).unwrap().contains(",identical"));
}

#[test]
fn mismatched_input_shape_is_a_load_error() {
    let t = tempfile::tempdir().unwrap();
    let other = tempfile::tempdir().unwrap();
    generate(t.path(), &[]);
    generate(other.path(), &["--size", "24"]);
    let inputs = other.path().join("inputs.bin");
    let o = snnsim(&run_args(t.path().to_str().unwrap(), inputs.to_str().unwrap()));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn default_config_round_trips() {
    let t = tempfile::tempdir().unwrap();
    generate(t.path(), &[]);
    let o = snnsim(&["default-config"]);
    assert!(o.status.success());
    let cfg = t.path().join("d.toml");
    fs::write(&cfg, &o.stdout).unwrap();
    let inputs = t.path().join("inputs.bin");
    let mut a = run_args(t.path().to_str().unwrap(), inputs.to_str().unwrap());
    let plain = snnsim(&a);
    a.extend(["--config", cfg.to_str().unwrap()]);
    assert_eq!(snnsim(&a).stdout, plain.stdout);
}
