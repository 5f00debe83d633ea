use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ndarray::Array2;
use serde_json::Value;
use tempfile::TempDir;
use tflr::{fitted, kld, validate_composition, CoefficientMatrix};

fn tflr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tflr"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_csv(path: &Path) -> (Vec<String>, Array2<f64>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines
        .next()
        .unwrap()
        .split(',')
        .map(str::to_string)
        .collect::<Vec<_>>();
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    let d = header.len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    (
        header,
        Array2::from_shape_vec((flat.len() / d, d), flat).unwrap(),
    )
}

fn simulate(dir: &Path, kind: &str, n: usize, seed: u64) {
    let out = tflr(&[
        "simulate",
        "--n",
        &n.to_string(),
        "--dp",
        "5",
        "--dr",
        "3",
        "--kind",
        kind,
        "--seed",
        &seed.to_string(),
        "--out",
        p(dir),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn b_from_json(v: &Value) -> Array2<f64> {
    let rows = v["B"]["values"].as_array().unwrap();
    let dr = rows[0].as_array().unwrap().len();
    let flat: Vec<f64> = rows
        .iter()
        .flat_map(|r| r.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()))
        .collect();
    Array2::from_shape_vec((rows.len(), dr), flat).unwrap()
}

#[test]
fn simulate_independent_writes_two_matrices() {
    let dir = TempDir::new().unwrap();
    simulate(dir.path(), "independent", 100, 4);
    for f in ["X.csv", "Y.csv"] {
        assert_eq!(
            fs::read_to_string(dir.path().join(f))
                .unwrap()
                .lines()
                .count(),
            101
        );
    }
    assert!(!dir.path().join("B_true.csv").exists());
    let meta: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta["spec"]["n"], 100);
    assert_eq!(meta["spec"]["kind"], "independent");
    assert_eq!(read_csv(&dir.path().join("X.csv")).1.dim(), (100, 5));
}

#[test]
fn simulate_dependent_writes_valid_truth() {
    let dir = TempDir::new().unwrap();
    simulate(dir.path(), "dependent", 50, 8);
    let (header, b) = read_csv(&dir.path().join("B_true.csv"));
    assert_eq!(header, ["y1", "y2", "y3"]);
    assert_eq!(b.dim(), (5, 3));
    CoefficientMatrix::new(b, 1e-12).unwrap();
}

#[test]
fn simulate_is_byte_identical_per_seed() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    simulate(a.path(), "dependent", 300, 21);
    simulate(b.path(), "dependent", 300, 21);
    for f in ["X.csv", "Y.csv", "B_true.csv", "meta.json"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn missing_seed_is_generated_and_recorded() {
    let dir = TempDir::new().unwrap();
    let out = tflr(&["simulate", "--n", "10", "--out", p(dir.path())]);
    assert!(out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    let seed: u64 = err.trim().strip_prefix("seed: ").unwrap().parse().unwrap();
    let meta: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta["spec"]["seed"].as_u64(), Some(seed));
    assert_eq!(meta["seed_generated"], true);
}

#[test]
fn invalid_spec_exits_with_input_code() {
    let dir = TempDir::new().unwrap();
    let out = tflr(&[
        "simulate",
        "--n",
        "10",
        "--dr",
        "1",
        "--seed",
        "1",
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fit_round_trip_for_both_estimators() {
    let dir = TempDir::new().unwrap();
    simulate(dir.path(), "dependent", 400, 5);
    let (x, y) = (dir.path().join("X.csv"), dir.path().join("Y.csv"));
    let xs = validate_composition(read_csv(&x).1, 1e-8).unwrap();
    let ys = validate_composition(read_csv(&y).1, 1e-8).unwrap();
    for method in ["em", "cirls"] {
        let json = dir.path().join(format!("{method}.json"));
        let out = tflr(&[
            "fit",
            "--x",
            p(&x),
            "--y",
            p(&y),
            "--method",
            method,
            "--out",
            p(&json),
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        let v: Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
        assert_eq!(v["method"], method);
        assert_eq!(v["converged"], true);
        assert_eq!(v["B"]["predictors"][0], "x1");
        assert_eq!(v["B"]["responses"][2], "y3");
        assert_eq!(v["config"]["eps"].as_f64(), Some(1e-8));
        let b = CoefficientMatrix::new(b_from_json(&v), 1e-9).unwrap();
        let recomputed = kld(&ys, &fitted(&xs, &b).unwrap(), 1e-8).unwrap();
        assert!((recomputed - v["kld"].as_f64().unwrap()).abs() <= 1e-12);
    }
}

#[test]
fn cls_on_identity_design_returns_the_responses() {
    let dir = TempDir::new().unwrap();
    let x = dir.path().join("x.csv");
    let y = dir.path().join("y.csv");
    fs::write(&x, "a,b,c\n1,0,0\n0,1,0\n0,0,1\n").unwrap();
    fs::write(&y, "p,q\n0.25,0.75\n0.5,0.5\n1,0\n").unwrap();
    let out = tflr(&["fit", "--x", p(&x), "--y", p(&y), "--method", "cls"]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let b = b_from_json(&v);
    let expected = [[0.25, 0.75], [0.5, 0.5], [1.0, 0.0]];
    for j in 0..3 {
        for k in 0..2 {
            assert!((b[[j, k]] - expected[j][k]).abs() <= 1e-8);
        }
    }
    assert_eq!(v["B"]["responses"][1], "q");
}

#[test]
fn predictions_for_new_rows() {
    let dir = TempDir::new().unwrap();
    simulate(dir.path(), "dependent", 200, 6);
    let new_x = dir.path().join("new.csv");
    fs::write(&new_x, "x1,x2,x3,x4,x5\n1,0,0,0,0\n0.2,0.2,0.2,0.2,0.2\n").unwrap();
    let json = dir.path().join("fit.json");
    let out = tflr(&[
        "fit",
        "--x",
        p(&dir.path().join("X.csv")),
        "--y",
        p(&dir.path().join("Y.csv")),
        "--out",
        p(&json),
        "--new-x",
        p(&new_x),
    ]);
    assert!(out.status.success());
    let (header, m) = read_csv(&dir.path().join("fitted.csv"));
    assert_eq!(header, ["y1", "y2", "y3"]);
    let v: Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    let b = b_from_json(&v);
    for k in 0..3 {
        assert!((m[[0, k]] - b[[0, k]]).abs() <= 1e-15);
    }
    for r in m.rows() {
        assert!((r.sum() - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn malformed_row_is_reported_with_its_line() {
    let dir = TempDir::new().unwrap();
    let x = dir.path().join("x.csv");
    let y = dir.path().join("y.csv");
    fs::write(&x, "a,b\n0.5,0.5\n0.1,0.9\n").unwrap();
    fs::write(&y, "p,q\n0.3,0.7\n0.5,0.6\n").unwrap();
    let out = tflr(&["fit", "--x", p(&x), "--y", p(&y)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("RowSumViolation"), "{err}");
    assert!(err.contains("line 3"), "{err}");
    assert!(err.contains("y.csv"), "{err}");
}

#[test]
fn other_input_errors_exit_with_input_code() {
    let dir = TempDir::new().unwrap();
    let good = dir.path().join("good.csv");
    fs::write(&good, "a,b\n0.5,0.5\n0.1,0.9\n").unwrap();
    let cases = [
        ("a,b\n0.5,x\n0.5,0.5\n", "not a number"),
        ("a,b\n-0.5,1.5\n0.5,0.5\n", "NegativeEntry"),
        ("a,b\n0.5,0.5,0\n0.5,0.5\n", "line 2"),
        ("a,b\n0.5,0.5\n", "rows"),
    ];
    for (i, (text, needle)) in cases.iter().enumerate() {
        let bad = dir.path().join(format!("bad{i}.csv"));
        fs::write(&bad, text).unwrap();
        let out = tflr(&["fit", "--x", p(&good), "--y", p(&bad)]);
        assert_eq!(out.status.code(), Some(2), "case {i}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(needle), "case {i}: {err}");
    }
    let out = tflr(&[
        "fit",
        "--x",
        p(&good),
        "--y",
        p(&dir.path().join("missing.csv")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn non_convergence_writes_result_and_exits_3() {
    let dir = TempDir::new().unwrap();
    simulate(dir.path(), "dependent", 300, 2);
    let json = dir.path().join("fit.json");
    let out = tflr(&[
        "fit",
        "--x",
        p(&dir.path().join("X.csv")),
        "--y",
        p(&dir.path().join("Y.csv")),
        "--method",
        "em",
        "--max-iter",
        "1",
        "--out",
        p(&json),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let v: Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(v["converged"], false);
    assert_eq!(v["iterations"], 1);
}

#[test]
fn bench_two_sizes() {
    let dir = TempDir::new().unwrap();
    let out = tflr(&[
        "bench",
        "--sizes",
        "1000,2000",
        "--replicates",
        "2",
        "--seed",
        "3",
        "--out",
        p(dir.path()),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let records = fs::read_to_string(dir.path().join("records.csv")).unwrap();
    let mut lines = records.lines();
    assert_eq!(
        lines.next().unwrap(),
        "n,solver,replicate,seed,elapsed_s,kld,iterations"
    );
    assert_eq!(lines.count(), 8);
    let s: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap())
            .unwrap();
    assert!(s.get("beta_em").is_none());
    assert!(s["scaling_note"].as_str().unwrap().contains("omitted"));
    assert_eq!(s["speedup"].as_array().unwrap().len(), 2);
    assert!(s["timer_resolution_s"].as_f64().unwrap() > 0.0);
    let (header, fig) = read_csv(&dir.path().join("figure.csv"));
    assert_eq!(header, ["n", "speedup"]);
    assert_eq!(fig.column(0).to_vec(), vec![1000.0, 2000.0]);
}

#[test]
fn bench_three_sizes_reports_exponents() {
    let dir = TempDir::new().unwrap();
    let out = tflr(&[
        "bench",
        "--sizes",
        "200,400,800",
        "--replicates",
        "1",
        "--kind",
        "independent",
        "--seed",
        "3",
        "--out",
        p(dir.path()),
    ]);
    assert!(out.status.success());
    let s: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap())
            .unwrap();
    assert!(s["beta_em"].is_f64());
    assert!(s["beta_cirls"].is_f64());
    assert!(s["scaling_em"]["r_squared"].is_f64());
}

#[test]
fn invalid_grid_exits_with_input_code() {
    let dir = TempDir::new().unwrap();
    let out = tflr(&[
        "bench",
        "--sizes",
        "400,200",
        "--seed",
        "1",
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = tflr(&[
        "bench",
        "--sizes",
        "200",
        "--replicates",
        "0",
        "--seed",
        "1",
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
