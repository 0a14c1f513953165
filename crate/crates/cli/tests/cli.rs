use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_optmmd"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run_in(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(dir: &Path, args: &[&str]) -> Value {
    let v: Value = serde_json::from_str(&ok(dir, args)).unwrap();
    assert_eq!(v["schema_version"], 1);
    v
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    run_in(dir, args).status.code().unwrap()
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Compares against a checked-in file; `UPDATE_GOLDEN=1` rewrites it.
fn check_golden(name: &str, actual: &str) {
    let path = golden_dir().join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::write(&path, actual).unwrap();
    }
    let expected = fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing golden file {}", path.display()));
    assert_eq!(actual, expected, "output differs from {name}");
}

fn blobs(dir: &Path, m: &str, eps: &str, seed: &str) {
    ok(dir, &["gen", "blobs", "--m", m, "--epsilon", eps, "--seed", seed, "--x-out", "x.csv", "--y-out", "y.csv"]);
}

#[test]
fn gen_matches_golden_and_is_deterministic() {
    let d = TempDir::new().unwrap();
    blobs(d.path(), "12", "6", "1");
    check_golden("blobs_x.csv", &fs::read_to_string(d.path().join("x.csv")).unwrap());
    check_golden("blobs_y.csv", &fs::read_to_string(d.path().join("y.csv")).unwrap());
    let first = fs::read(d.path().join("y.csv")).unwrap();
    blobs(d.path(), "12", "6", "1");
    assert_eq!(fs::read(d.path().join("y.csv")).unwrap(), first);

    let v = json(d.path(), &["gen", "gauss-laplace", "--m", "7", "--dim", "3", "--x-out", "a.bin", "--y-out", "b.csv"]);
    assert_eq!(v["m"], 7);
    assert_eq!(v["dim"], 3);
    let bin = fs::read(d.path().join("a.bin")).unwrap();
    assert_eq!(&bin[..4], b"MMD1");
    assert_eq!(bin.len(), 4 + 16 + 7 * 3 * 8);
}

#[test]
fn test_command_golden_and_fields() {
    let d = TempDir::new().unwrap();
    blobs(d.path(), "30", "6", "3");
    let args = ["test", "--x", "x.csv", "--y", "y.csv", "--bandwidth", "0.67", "--perms", "100", "--seed", "5"];
    let text = ok(d.path(), &args);
    check_golden("test.json", &text);
    let v: Value = serde_json::from_str(&text).unwrap();
    for field in ["statistic", "threshold", "p_value", "reject", "alpha", "B", "kernel", "seed"] {
        assert!(!v[field].is_null(), "missing {field}");
    }
    assert_eq!(v["B"], 100);
    assert_eq!(v["kernel"]["bandwidth"], 0.67);
    // Same flags, different thread count: identical statistical output.
    let mut threaded = args.to_vec();
    threaded.extend(["--threads", "3"]);
    assert_eq!(ok(d.path(), &threaded), text);
    let csv = ok(d.path(), &[&args[..], &["--format", "csv"]].concat());
    check_golden("test.csv", &csv);
}

#[test]
fn single_permutation_p_values() {
    let d = TempDir::new().unwrap();
    blobs(d.path(), "10", "1", "2");
    for seed in 0..6 {
        let s = seed.to_string();
        let v = json(d.path(), &["test", "--x", "x.csv", "--y", "y.csv", "--median", "--perms", "1", "--seed", &s]);
        let p = v["p_value"].as_f64().unwrap();
        assert!(p == 0.5 || p == 1.0, "p = {p}");
    }
}

#[test]
fn select_reports() {
    let d = TempDir::new().unwrap();
    blobs(d.path(), "40", "6", "4");
    let csv = ok(d.path(), &["select", "--x", "x.csv", "--y", "y.csv", "--criterion", "max-t", "--format", "csv"]);
    check_golden("select_max_t.csv", &csv);
    assert_eq!(csv.lines().count(), 1 + 30);
    assert_eq!(csv.lines().filter(|l| l.ends_with(",true")).count(), 1);

    let csv = ok(d.path(), &["select", "--x", "x.csv", "--y", "y.csv", "--grid", "0.5:2:4", "--format", "csv"]);
    assert_eq!(csv.lines().count(), 1 + 4);

    let v = json(
        d.path(),
        &["select", "--x", "x.csv", "--y", "y.csv", "--median", "--kernel-out", "k.json"],
    );
    assert_eq!(v["candidates"].as_array().unwrap().len(), 1);
    assert_eq!(v["criterion"], "median");
    let k: Value = serde_json::from_str(&fs::read_to_string(d.path().join("k.json")).unwrap()).unwrap();
    assert_eq!(k["bandwidth"], v["kernel"]["bandwidth"]);
    let t = json(d.path(), &["test", "--x", "x.csv", "--y", "y.csv", "--kernel", "k.json", "--perms", "20"]);
    assert_eq!(t["kernel"], v["kernel"]);

    let v = json(
        d.path(),
        &["select", "--x", "x.csv", "--y", "y.csv", "--criterion", "max-power", "--grid", "0.5:4:5", "--perms", "50"],
    );
    let cands = v["candidates"].as_array().unwrap();
    assert!(cands.iter().all(|c| c["power_estimate"].as_f64().is_some()));
}

#[test]
fn train_trace_and_zero_iterations() {
    let d = TempDir::new().unwrap();
    blobs(d.path(), "40", "6", "5");
    let v = json(
        d.path(),
        &["train", "--x", "x.csv", "--y", "y.csv", "--ard", "--bandwidth", "1.5", "--iterations", "0"],
    );
    assert_eq!(v["kernel"], v["init"]);
    assert_eq!(v["trace"].as_array().unwrap().len(), 0);

    let v = json(
        d.path(),
        &[
            "train", "--x", "x.csv", "--y", "y.csv", "--ard", "--bandwidth", "1.5", "--iterations", "7", "--batch", "30",
            "--trace", "trace.csv",
        ],
    );
    assert_eq!(v["trace"].as_array().unwrap().len(), 7);
    assert_eq!(v["kernel"]["weights"].as_array().unwrap().len(), 2);
    let trace = fs::read_to_string(d.path().join("trace.csv")).unwrap();
    assert!(trace.starts_with("iteration,t_stat\n"));
    assert_eq!(trace.lines().count(), 8);
}

#[test]
fn power_curve_csv_shape() {
    let d = TempDir::new().unwrap();
    let csv = ok(
        d.path(),
        &[
            "power-curve", "--epsilons", "1,6", "--reps", "2", "--m", "30", "--perms", "40", "--methods", "median,max-t",
            "--format", "csv", "--bandwidths", "bw.csv",
        ],
    );
    check_golden("power_curve.csv", &csv);
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "epsilon,method,rejection_rate,stderr,rejections,reps,bandwidth");
    assert_eq!(lines.count(), 2 * 2);
    let bw = fs::read_to_string(d.path().join("bw.csv")).unwrap();
    assert_eq!(bw.lines().count(), 1 + 2 * 2 * 2);

    let v = json(
        d.path(),
        &["power-curve", "--epsilons", "2", "--reps", "1", "--m", "20", "--perms", "20", "--methods", "max-mmd,best"],
    );
    let methods: Vec<&str> = v["rows"].as_array().unwrap().iter().map(|r| r["method"].as_str().unwrap()).collect();
    assert_eq!(methods, ["max-mmd", "best"]);
}

#[test]
fn witness_outputs() {
    let d = TempDir::new().unwrap();
    blobs(d.path(), "15", "6", "6");
    let csv = ok(
        d.path(),
        &["witness", "--x", "x.csv", "--y", "y.csv", "--bandwidth", "1", "--top", "3", "--format", "csv", "--extremes", "ex.json"],
    );
    check_golden("witness.csv", &csv);
    assert_eq!(csv.lines().count(), 1 + 30);
    let ex: Value = serde_json::from_str(&fs::read_to_string(d.path().join("ex.json")).unwrap()).unwrap();
    assert_eq!(ex["schema_version"], 1);
    assert_eq!(ex["top_positive"].as_array().unwrap().len(), 3);
    assert!(ex["mean_gap"].as_f64().is_some());

    ok(d.path(), &["gen", "blobs", "--m", "4", "--seed", "9", "--x-out", "p.csv", "--y-out", "q.csv"]);
    let v = json(d.path(), &["witness", "--x", "x.csv", "--y", "y.csv", "--bandwidth", "1", "--probes", "p.csv", "--top", "1"]);
    assert_eq!(v["values"].as_array().unwrap().len(), 4);
    assert!(v["mean_gap"].is_null());
}

#[test]
fn bench_and_audit() {
    let d = TempDir::new().unwrap();
    let csv = ok(d.path(), &["bench", "--m", "8,16", "--perms", "10", "--reps", "2", "--thread-counts", "1,2", "--format", "csv"]);
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "m,B,threads,variant,rep,wall_seconds");
    // Per size: optimized at two thread counts plus naive at one, two reps each.
    assert_eq!(lines.count(), 2 * 3 * 2);
    let v = json(d.path(), &["audit", "--m", "12", "--perms", "3"]);
    assert_eq!(v["passes"], true);
    let v = json(d.path(), &["audit", "--m", "12", "--perms", "3", "--variant", "naive"]);
    assert_eq!(v["passes"], false);
}

#[test]
fn exit_codes() {
    let d = TempDir::new().unwrap();
    blobs(d.path(), "20", "2", "1");
    let p = d.path();
    assert_eq!(code(p, &["--help"]), 0);
    assert_eq!(code(p, &["frobnicate"]), 1);
    assert_eq!(code(p, &["test", "--x", "x.csv", "--y", "y.csv"]), 1);
    assert_eq!(code(p, &["test", "--x", "x.csv", "--y", "y.csv", "--bandwidth", "-1"]), 1);
    assert_eq!(code(p, &["test", "--x", "x.csv", "--y", "y.csv", "--median", "--alpha", "1.5"]), 1);
    assert_eq!(code(p, &["select", "--x", "x.csv", "--y", "y.csv", "--grid", "1:2"]), 1);
    assert_eq!(code(p, &["test", "--x", "x.csv", "--y", "missing.csv", "--median"]), 2);
    fs::write(p.join("bad.csv"), "1,2\n3\n").unwrap();
    let out = run_in(p, &["test", "--x", "x.csv", "--y", "bad.csv", "--median"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.csv:2"));
    fs::write(p.join("wide.csv"), "1,2,3\n4,5,6\n").unwrap();
    assert_eq!(code(p, &["test", "--x", "x.csv", "--y", "wide.csv", "--median"]), 2);
    ok(p, &["gen", "blobs", "--m", "3", "--x-out", "a.csv", "--y-out", "b.csv"]);
    assert_eq!(code(p, &["select", "--x", "a.csv", "--y", "b.csv"]), 3);
}
