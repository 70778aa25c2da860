use std::path::Path;
use std::process::{Command, Output};

use bdg::cli::Span;
use bdg::io::read_table;
use proptest::prelude::*;
use serde_json::Value;

fn bdg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bdg"))
        .args(args)
        .env("BDG_THREADS", "1")
        .output()
        .expect("run bdg")
}

fn record(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("JSON record on stdout")
}

fn regimes(v: &Value) -> Vec<String> {
    v["result"].as_array().unwrap().iter().map(|r| r["regime"].as_str().unwrap().to_string()).collect()
}

#[test]
fn subcritical_sweep_diverges_down() {
    let dir = tempfile::tempdir().unwrap();
    let csv_dir = dir.path().join("grids");
    let v = record(&bdg(&["solve", "--C", "1.25", "--t0-sweep", "0.8:1.0:9", "--csv-dir", csv_dir.to_str().unwrap()]));
    assert_eq!(regimes(&v), vec!["MinusInfinity"; 9]);
    let (header, rows) = read_table(csv_dir.join("grid_000.csv")).unwrap();
    assert_eq!(header, ["t", "U", "analytic_floor"]);
    assert!(rows.windows(2).all(|w| w[0][0] < w[1][0]));
    let last = rows.last().unwrap();
    assert_eq!(last[0], 0.8);
    assert!((last[2] - (0.8f64.sqrt() - 1.25)).abs() < 1e-15);
}

#[test]
fn figure_cases() {
    assert_eq!(regimes(&record(&bdg(&["solve", "--C", "1.274", "--t0", "0.9"]))), ["PlusInfinity"]);
    let bounded = record(&bdg(&["solve", "--C", "1.27267", "--t0", "0.9036", "--damped-below", "0.06"]));
    assert_eq!(regimes(&bounded), ["Bounded"]);
    assert!(bounded["result"][0]["pasting_gap"].as_f64().unwrap().abs() > 0.01);
}

#[test]
fn solve_needs_a_pasting_point() {
    let out = bdg(&["solve", "--C", "1.25"]);
    assert!(!out.status.success());
    let out = bdg(&["solve", "--C", "1.25", "--t0", "0.9", "--t0-sweep", "0.8:1:3"]);
    assert!(!out.status.success());
}

#[test]
fn solver_failure_exits_nonzero_with_a_diagnostic() {
    let out = bdg(&["solve", "--C", "1.25", "--t0", "-1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn flags_are_long_only() {
    assert!(!bdg(&["-h"]).status.success());
    assert!(!bdg(&["solve", "-h"]).status.success());
    assert!(bdg(&["--help"]).status.success());
    assert!(bdg(&["solve", "--help"]).status.success());
    assert!(bdg(&["--version"]).status.success());
}

#[test]
fn interval_at_a_subcritical_constant_is_empty() {
    let v = record(&bdg(&["critical", "--p", "1", "--emit-interval", "--C", "1.25"]));
    assert!(v["result"].is_null());
}

#[test]
fn interval_at_a_supercritical_constant() {
    let v = record(&bdg(&["critical", "--p", "1", "--emit-interval", "--C", "1.274"]));
    let t1 = v["result"]["t1"].as_f64().unwrap();
    let t2 = v["result"]["t2"].as_f64().unwrap();
    assert!((0.80..0.86).contains(&t1) && (0.95..1.0).contains(&t2), "{t1} {t2}");
}

#[test]
fn critical_pair_for_exponent_one_half() {
    // Regression value; stable to 1e-7 in C and 1e-3 in t0 under two step halvings
    // and a ten times lower t_min.
    let v = record(&bdg(&["critical", "--p", "0.5"]));
    let c = v["result"]["c_hat"].as_f64().unwrap();
    let t0 = v["result"]["t0_hat"].as_f64().unwrap();
    assert!((c - 1.247618).abs() < 2e-5, "{c}");
    assert!((t0 - 1.698).abs() < 1e-2, "{t0}");
    assert!(c > 1.0);
}

#[test]
fn densities_table_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dens.csv");
    let out = bdg(&["densities", "--h", "0.3", "--s-range", "0.1:2:20", "--out", path.to_str().unwrap()]);
    assert!(out.status.success());
    let (header, rows) = read_table(&path).unwrap();
    assert_eq!(header, ["s", "f_h", "g"]);
    assert_eq!(rows.len(), 20);
    assert!(rows.iter().all(|r| r[1] > 0.0 && r[2] > 0.0));
    let sidecar: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("dens.csv.json")).unwrap()).unwrap();
    assert_eq!(sidecar["command"]["densities"]["h"], 0.3);
}

#[test]
fn extend_surface_columns() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("surface.csv");
    let out = bdg(&["extend", "--t-range", "0:1.5:4", "--b-points", "5", "--bstar", "2", "--out", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = read_table(&path).unwrap();
    assert_eq!(header, ["t", "b", "bstar", "U", "H"]);
    assert_eq!(rows.len(), 20);
    for r in &rows {
        assert_eq!(r[2], 2.0);
        assert!(r[3] >= r[0].sqrt() - 1.27267 * 2.0);
        if r[1] == 0.0 {
            assert_eq!(r[4], 0.0);
        }
    }
}

#[test]
fn extend_reports_a_concavity_violation() {
    let v = record(&bdg(&["extend", "--t-range", "0:1:2", "--b-points", "2", "--concavity", "--format", "json"]));
    assert!(v["result"]["concavity"]["margin"].as_f64().unwrap() > 0.0);
    assert_eq!(v["result"]["rows"].as_array().unwrap().len(), 4);
}

#[test]
fn replay_reproduces_the_record() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first.json");
    let second = dir.path().join("second.json");
    let run = |args: &[&str]| assert!(bdg(args).status.success());
    run(&["dichotomy", "--thresholds", "0.7", "--caps", "10,100", "--n-paths", "200", "--ratio", "1e-2", "--seed", "3", "--out", first.to_str().unwrap()]);
    run(&["replay", "--record", first.to_str().unwrap(), "--out", second.to_str().unwrap()]);
    let a = std::fs::read(&first).unwrap();
    let b = std::fs::read(&second).unwrap();
    assert_eq!(a, b);
}

#[test]
fn verify_densities_passes() {
    let out = bdg(&["verify", "densities"]);
    let v = record(&out);
    assert_eq!(v["result"]["passed"], true);
    assert!(v["result"]["checks"].as_array().unwrap().len() >= 9);
}

#[test]
fn verify_hedging_with_few_paths() {
    let out = bdg(&["verify", "hedging", "--seed", "7", "--n-paths", "3000"]);
    let v = record(&out);
    assert_eq!(v["result"]["checks"][0]["passed"], true);
    assert!(v["result"]["checks"][0]["value"].as_f64().unwrap() >= 0.99);
}

#[test]
fn verify_exit_code_follows_the_checks() {
    // With a handful of paths the near-optimal ratio cannot reach its floor.
    let out = bdg(&["verify", "bdg", "--seed", "7", "--n-paths", "20"]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let passed = v["result"]["passed"].as_bool().unwrap();
    assert_eq!(out.status.success(), passed);
    if !passed {
        assert_eq!(out.status.code(), Some(1));
        assert!(String::from_utf8_lossy(&out.stderr).contains("failed:"));
    }
}

#[test]
fn thread_count_comes_from_the_environment() {
    let out = Command::new(env!("CARGO_BIN_EXE_bdg"))
        .args(["dichotomy", "--thresholds", "1.2", "--caps", "10", "--n-paths", "100", "--ratio", "1e-2"])
        .env("BDG_THREADS", "not a number")
        .output()
        .unwrap();
    assert!(!out.status.success());
    let threaded = Command::new(env!("CARGO_BIN_EXE_bdg"))
        .args(["dichotomy", "--thresholds", "1.2", "--caps", "10", "--n-paths", "100", "--ratio", "1e-2"])
        .env("BDG_THREADS", "3")
        .output()
        .unwrap();
    let single = bdg(&["dichotomy", "--thresholds", "1.2", "--caps", "10", "--n-paths", "100", "--ratio", "1e-2"]);
    assert_eq!(threaded.stdout, single.stdout);
}

#[test]
fn json_output_is_utf8_with_stable_keys() {
    let out = bdg(&["densities", "--s-range", "1:2:2", "--format", "json"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let keys = ["\"tool\"", "\"version\"", "\"command\"", "\"result\""];
    let pos: Vec<usize> = keys.iter().map(|k| text.find(k).unwrap()).collect();
    assert!(pos.windows(2).all(|w| w[0] < w[1]));
    assert!(Path::new(env!("CARGO_BIN_EXE_bdg")).exists());
}

proptest! {
    #[test]
    fn span_round_trips(lo in -10.0f64..10.0, width in 0.0f64..10.0, n in 1usize..1000) {
        let span = Span { lo, hi: lo + width, n };
        let parsed: Span = span.to_string().parse().unwrap();
        prop_assert_eq!(parsed, span);
        let points = span.points();
        prop_assert_eq!(points.len(), n);
        prop_assert_eq!(points[0], lo);
    }

    #[test]
    fn malformed_spans_are_rejected(s in "[0-9:.a-z]{0,12}") {
        if let Ok(span) = s.parse::<Span>() {
            prop_assert!(span.n >= 1 && span.lo <= span.hi);
        }
    }
}
