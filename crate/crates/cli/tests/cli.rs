use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use sigma2_core::grid::{GridField, GridSpec};
use sigma2_core::report::Report;

fn sigma2(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sigma2")).args(args).output().expect("binary runs")
}

fn run_report(args: &[&str], dir: &Path, name: &str) -> (i32, Report) {
    let path = dir.join(name);
    let mut full: Vec<&str> = args.to_vec();
    let p = path.to_str().unwrap().to_string();
    full.extend(["--report", &p]);
    let out = sigma2(&full);
    let text = std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("no report: {}", String::from_utf8_lossy(&out.stderr)));
    (out.status.code().unwrap(), Report::from_json(&text).unwrap())
}

#[test]
fn verify_zoo_warren_passes() {
    let dir = tempfile::tempdir().unwrap();
    let (code, r) = run_report(&["verify-zoo", "--solution", "warren", "--n", "3", "--box", "2", "--samples", "10000", "--seed", "1"], dir.path(), "z.json");
    assert_eq!(code, 0);
    assert_eq!(r.seed, Some(1));
    assert!(r.results["scan"]["max_abs_residual"].as_f64().unwrap() <= 1e-10);
    assert!(r.violations.is_empty());
}

#[test]
fn scan_reports_violation_as_finding() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["jacobi-scan", "--n", "5", "--quantity", "logtrace", "--kappa", "0", "--budget", "1000", "--seed", "3"];
    let (code, r) = run_report(&args, dir.path(), "s.json");
    assert_eq!(code, 0);
    assert_eq!(r.results["violation_found"], Value::Bool(true));
    assert!(r.results["scan"]["worst"]["min_gap"].as_f64().unwrap() < 0.0);

    let mut strict = args.to_vec();
    strict.extend(["--expect", "nonnegative"]);
    let (code, r) = run_report(&strict, dir.path(), "t.json");
    assert_eq!(code, 2);
    assert_eq!(r.violations.len(), 1);
}

#[test]
fn solve_quadratic_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("u.bin");
    let log = dir.path().join("log.jsonl");
    let args = [
        "solve",
        "--dim",
        "2",
        "--boundary",
        "quadratic:1,1",
        "--h",
        "0.0625",
        "--tol",
        "1e-9",
        "--output",
        out.to_str().unwrap(),
        "--log",
        log.to_str().unwrap(),
    ];
    let (code, r) = run_report(&args, dir.path(), "r.json");
    assert_eq!(code, 0);
    assert!(r.results["max_error"].as_f64().unwrap() <= 1e-9);
    let u = GridField::read_binary(std::fs::File::open(&out).unwrap()).unwrap();
    assert_eq!(u.spec.shape, vec![17, 17]);
    let lines = std::fs::read_to_string(&log).unwrap();
    assert!(lines.lines().all(|l| serde_json::from_str::<Value>(l).is_ok()));
}

#[test]
fn solve_rejects_mismatched_dimension() {
    let out = sigma2(&["solve", "--dim", "2", "--boundary", "warren", "--h", "0.125"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(sigma2(&["solve", "--dim", "2", "--bogus"]).status.code(), Some(1));
    assert_eq!(sigma2(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(sigma2(&["verify-zoo", "--solution", "warren"]).status.code(), Some(1), "seed is mandatory");
    assert_eq!(sigma2(&["--help"]).status.code(), Some(0));
}

#[test]
fn randomized_runs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["jacobi-scan", "--n", "4", "--quantity", "almost", "--budget", "200", "--seed", "9"];
    let (_, a) = run_report(&args, dir.path(), "a.json");
    let (_, b) = run_report(&args, dir.path(), "b.json");
    assert_eq!(a.payload(), b.payload());
    let (_, c) = run_report(&["jacobi-scan", "--n", "4", "--quantity", "almost", "--budget", "200", "--seed", "10"], dir.path(), "c.json");
    assert_ne!(a.input_digest, c.input_digest);
}

#[test]
fn transform_reads_grid_files() {
    let dir = tempfile::tempdir().unwrap();
    let spec = GridSpec::cube(2, -1.0, 1.0, 0.125).unwrap();
    let u = GridField::from_fn(spec, |x| x[0] * x[0] + 0.25 * x[1] * x[1]);
    let input = dir.path().join("u.csv");
    u.write_csv(std::fs::File::create(&input).unwrap()).unwrap();
    let output = dir.path().join("w.bin");
    let (code, r) = run_report(
        &["transform", "--input", input.to_str().unwrap(), "--k", "0", "--tol", "1e-10", "--output", output.to_str().unwrap()],
        dir.path(),
        "t.json",
    );
    assert_eq!(code, 0, "{:?}", r.violations);
    let w = GridField::read_binary(std::fs::File::open(&output).unwrap()).unwrap();
    // u = x^2 + y^2/4 has w = y1^2/4 + y2^2.
    for f in 0..w.spec.len() {
        let y = w.spec.coord(f);
        assert!((w.values[f] - (0.25 * y[0] * y[0] + y[1] * y[1])).abs() < 1e-10);
    }
}

#[test]
fn resolve_li_and_certify() {
    let dir = tempfile::tempdir().unwrap();
    let (code, r) = run_report(&["resolve-li"], dir.path(), "l.json");
    assert_eq!(code, 0);
    assert!((r.results["slope"].as_f64().unwrap() + 1.4).abs() <= 0.05);
    assert_eq!(r.results["resolution"]["resolved_residual"], Value::Array(vec![]));

    let (code, r) = run_report(&["certify", "--lambda", "1.5,1.5,-0.4166666666666667", "--quantity", "almost", "--expect", "nonnegative"], dir.path(), "c.json");
    assert_eq!(code, 0);
    assert!(r.results["certificate"]["min_gap"].as_f64().unwrap() >= 0.0);
}

#[test]
fn printed_singular_pair_is_a_violation() {
    let dir = tempfile::tempdir().unwrap();
    let (code, r) = run_report(&["verify-zoo", "--solution", "li-singular-printed", "--samples", "200", "--seed", "2"], dir.path(), "p.json");
    assert_eq!(code, 2);
    assert!(!r.violations.is_empty());
}

#[test]
fn weakform_and_nitsche_tables() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("w.csv");
    let (code, r) = run_report(&["weakform", "--min-order", "1.8", "--csv", csv.to_str().unwrap()], dir.path(), "w.json");
    assert_eq!(code, 0);
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 4);
    assert_eq!(r.results["orders"].as_array().unwrap().len(), 2);

    let (code, r) = run_report(&["nitsche", "--h", "0.0625,0.03125"], dir.path(), "n.json");
    assert_eq!(code, 0);
    assert!(r.results["det_orders"][0].as_f64().unwrap() > 1.5);
}
