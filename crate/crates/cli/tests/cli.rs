use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use cqdr::sim::{generate_covariates, sample_error};
use cqdr::{ErrorDist, ModelKind};
use cqdr_cli::{load_dataset_csv, ColumnRef, DataError, Dataset};
use nalgebra::DMatrix;
use serde_json::Value;
use tempfile::TempDir;

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

fn name(s: &str) -> ColumnRef {
    ColumnRef::Name(s.into())
}

#[test]
fn three_columns_five_rows() {
    let dir = TempDir::new().unwrap();
    let p = write(&dir, "d.csv", "y,x1,x2\n1,2,3\n4,5,6\n7,8,9\n1.5,2.5,3.5\n-1,0,1e3\n");
    let d = load_dataset_csv(&p, &name("y"), None).unwrap();
    assert_eq!((d.n(), d.p()), (5, 2));
    assert_eq!(d.column_names, vec!["x1", "x2"]);
    assert_eq!(d.y[3], 1.5);
    assert_eq!(d.x[(4, 1)], 1000.0);
    assert_eq!(d.dropped_rows, 0);
}

#[test]
fn nan_row_dropped() {
    let dir = TempDir::new().unwrap();
    let p = write(&dir, "d.csv", "y,x1,x2\n1,2,3\n4,NaN,6\n7,8,9\n");
    let d = load_dataset_csv(&p, &name("y"), None).unwrap();
    assert_eq!(d.n(), 2);
    assert_eq!(d.dropped_rows, 1);
    assert_eq!(d.y, vec![1.0, 7.0]);
}

#[test]
fn blank_and_infinite_cells_dropped() {
    let dir = TempDir::new().unwrap();
    let p = write(&dir, "d.csv", "y,x1\n1,2\n,3\n4,inf\n5,6\n");
    let d = load_dataset_csv(&p, &name("y"), None).unwrap();
    assert_eq!(d.y, vec![1.0, 5.0]);
    assert_eq!(d.dropped_rows, 2);
}

#[test]
fn missing_response_names_column() {
    let dir = TempDir::new().unwrap();
    let p = write(&dir, "d.csv", "y,x1\n1,2\n");
    match load_dataset_csv(&p, &name("income"), None) {
        Err(DataError::MissingColumn(c)) => assert_eq!(c, "income"),
        other => panic!("unexpected {other:?}"),
    }
    let err = load_dataset_csv(&p, &name("income"), None).unwrap_err();
    assert!(err.to_string().contains("income"));
}

#[test]
fn missing_file() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("absent.csv");
    assert!(matches!(load_dataset_csv(&p, &name("y"), None), Err(DataError::FileNotFound(_))));
}

#[test]
fn text_columns() {
    let dir = TempDir::new().unwrap();
    let p = write(&dir, "d.csv", "y,label,x1\n1,a,2\n3,b,4\n");
    let d = load_dataset_csv(&p, &name("y"), None).unwrap();
    assert_eq!(d.column_names, vec!["x1"]);
    assert!(matches!(
        load_dataset_csv(&p, &name("y"), Some(&[name("label")])),
        Err(DataError::NoNumericData(_))
    ));
    assert!(matches!(load_dataset_csv(&p, &name("label"), None), Err(DataError::NoNumericData(_))));
}

#[test]
fn every_row_bad() {
    let dir = TempDir::new().unwrap();
    let p = write(&dir, "d.csv", "y,x1,x2\n1,2,\n3,,4\n");
    assert!(matches!(load_dataset_csv(&p, &name("y"), None), Err(DataError::EmptyAfterFiltering { dropped: 2 })));
}

#[test]
fn columns_by_index_and_subset() {
    let dir = TempDir::new().unwrap();
    let p = write(&dir, "d.csv", "a,b,c,d\n1,2,3,4\n5,6,7,8\n");
    let d = load_dataset_csv(&p, &ColumnRef::Index(2), Some(&[name("d"), ColumnRef::Index(0)])).unwrap();
    assert_eq!(d.response_name, "c");
    assert_eq!(d.column_names, vec!["d", "a"]);
    assert_eq!(d.x[(1, 0)], 8.0);
    assert_eq!(d.x[(1, 1)], 5.0);
    assert!(matches!(load_dataset_csv(&p, &ColumnRef::Index(9), None), Err(DataError::MissingColumn(_))));
}

#[test]
fn csv_round_trip() {
    let dir = TempDir::new().unwrap();
    let n = 60;
    let x = generate_covariates(n, 4, 17);
    let x = DMatrix::from_fn(n, 4, |i, j| x[(i, j)] * 10f64.powi(j as i32 * 3 - 4));
    let y: Vec<f64> = (0..n).map(|i| (i as f64).sqrt() / 7.0 - 3.0).collect();
    let d = Dataset {
        x,
        y,
        response_name: "resp".into(),
        column_names: (1..=4).map(|k| format!("x{k}")).collect(),
        source: "synthetic".into(),
        dropped_rows: 0,
    };
    let path = dir.path().join("rt.csv");
    d.write_csv(fs::File::create(&path).unwrap()).unwrap();
    let back = load_dataset_csv(&path, &name("resp"), None).unwrap();
    assert_eq!(back.column_names, d.column_names);
    let dx = (&back.x - &d.x).amax();
    let dy = back.y.iter().zip(&d.y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(dx <= 1e-12 && dy <= 1e-12, "{dx} {dy}");
}

fn cqdr(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_cqdr")).args(args).output().unwrap()
}

/// A small Model C sample: `y = x1 + exp(x2) eps` with four covariates.
fn model_c_csv(dir: &TempDir, n: usize) -> PathBuf {
    let x = generate_covariates(n, 4, 3);
    let eps = sample_error(ErrorDist::Normal, n, 3);
    let mut text = String::from("y,x1,x2,x3,x4\n");
    for i in 0..n {
        let row: Vec<f64> = x.row(i).iter().copied().collect();
        let y = ModelKind::C.response(&row, eps[i]);
        text.push_str(&format!("{y},{},{},{},{}\n", row[0], row[1], row[2], row[3]));
    }
    write(dir, "c.csv", &text)
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn fit_then_project() {
    let dir = TempDir::new().unwrap();
    let data = model_c_csv(&dir, 120);
    let report = dir.path().join("fit.json");
    let out = cqdr(&[
        "fit",
        "--input",
        data.to_str().unwrap(),
        "--response",
        "y",
        "--q",
        "2",
        "--estimator",
        "sir",
        "--output",
        report.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = read_json(&report);
    assert_eq!(v["command"], "fit");
    assert_eq!(v["q"], 2);
    assert_eq!(v["basis"].as_array().unwrap().len(), 4);
    assert_eq!(v["input"]["columns"][0], "x1");
    assert_eq!(v["config"]["estimator"], "sir");

    // Floats carry 17 significant digits.
    let text = fs::read_to_string(&report).unwrap();
    let first = v["basis"][0][0].as_f64().unwrap();
    assert!(text.contains(&format!("{first:.16e}")));

    let proj = dir.path().join("z.csv");
    let out = cqdr(&["project", "--basis", report.to_str().unwrap(), "--input", data.to_str().unwrap(), "--output", proj.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let z = load_dataset_csv(&proj, &name("y"), None).unwrap();
    assert_eq!((z.n(), z.p()), (120, 2));
    assert_eq!(z.column_names, vec!["z1", "z2"]);
}

#[test]
fn project_single_direction_emits_curves() {
    let dir = TempDir::new().unwrap();
    let data = model_c_csv(&dir, 150);
    let report = dir.path().join("fit.json");
    let out = cqdr(&["fit", "--input", data.to_str().unwrap(), "--response", "y", "--q", "1", "--estimator", "sir", "--output", report.to_str().unwrap()]);
    assert!(out.status.success());
    let out = cqdr(&["project", "--basis", report.to_str().unwrap(), "--input", data.to_str().unwrap(), "--tau-grid", "0.25,0.5,0.75"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["coordinates"].as_array().unwrap().len(), 150);
    let curves = v["quantile_curves"].as_array().unwrap();
    assert_eq!(curves.len(), 3);
    let grid = v["curve_grid"].as_array().unwrap().len();
    assert_eq!(curves[1]["fitted"].as_array().unwrap().len(), grid);
}

#[test]
fn bandwidth_command() {
    let dir = TempDir::new().unwrap();
    let data = model_c_csv(&dir, 80);
    let out = cqdr(&["bandwidth", "--input", data.to_str().unwrap(), "--response", "y", "--bandwidth", "fixed:0.7", "--tau-grid", "0.3,0.7"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["rule"], "fixed:0.7");
    assert_eq!(v["per_level"][1]["tau"].as_f64(), Some(0.7));
    assert_eq!(v["per_level"][1]["value"].as_f64(), Some(0.7));
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let data = model_c_csv(&dir, 40);
    let d = data.to_str().unwrap();

    assert_eq!(cqdr(&["fit", "--bogus"]).status.code(), Some(2));
    assert_eq!(cqdr(&["fit", "--input", d, "--response", "y", "--estimator", "pca"]).status.code(), Some(2));
    assert_eq!(cqdr(&["fit", "--input", d, "--response", "y", "--bandwidth", "fixed:zero"]).status.code(), Some(2));
    assert_eq!(cqdr(&["fit", "--input", d, "--response", "y", "--q", "9", "--estimator", "sir"]).status.code(), Some(2));
    let cfg = write(&dir, "bad.toml", "estimator.qopg.nonsense = 1\n");
    assert_eq!(cqdr(&["fit", "--input", d, "--response", "y", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));

    assert_eq!(cqdr(&["fit", "--input", d, "--response", "nope", "--q", "1"]).status.code(), Some(3));
    assert_eq!(cqdr(&["fit", "--input", "/nonexistent/x.csv", "--response", "y"]).status.code(), Some(3));

    // Constant covariates leave SIR without an invertible covariance.
    let flat = write(&dir, "flat.csv", &(0..40).fold(String::from("y,x1,x2\n"), |s, i| s + &format!("{i},1,2\n")));
    let out = cqdr(&["fit", "--input", flat.to_str().unwrap(), "--response", "y", "--q", "1", "--estimator", "sir"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "run.toml",
        "seed = 5\n\"estimator.qopg.tau_grid\" = [0.2, 0.8]\n[estimator]\nkind = \"qmave\"\n[estimator.sir]\nn_slices = 4\n",
    );
    let out = cqdr(&["config", "--config", cfg.to_str().unwrap(), "--seed", "9", "--tau-grid", "0.5"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("\"seed\" = 9"));
    assert!(text.contains("\"estimator.kind\" = \"qmave\""));
    assert!(text.contains("\"estimator.qopg.tau_grid\" = [0.5]"));
    assert!(text.contains("\"estimator.sir.n_slices\" = 4"));

    // The printed document is itself a valid config.
    let again = write(&dir, "again.toml", &text);
    let out2 = cqdr(&["config", "--config", again.to_str().unwrap()]);
    assert!(out2.status.success());
    assert_eq!(String::from_utf8(out2.stdout).unwrap(), text);
}

#[test]
fn simulate_small_and_thread_independent() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "sim.toml",
        "[simulate]\nmodel = \"C\"\nn = 60\np = 4\nreplicates = 3\nestimators = [\"sir\"]\n",
    );
    let csv_path = dir.path().join("errors.csv");
    let csv_arg = format!("output.errors_csv = {:?}\n", csv_path.to_str().unwrap());
    fs::write(&cfg, fs::read_to_string(&cfg).unwrap().replace("[simulate]", &format!("{csv_arg}[simulate]"))).unwrap();

    let run = |threads: &str, out: &str| {
        let o = dir.path().join(out);
        let res = cqdr(&["simulate", "--config", cfg.to_str().unwrap(), "--seed", "11", "--threads", threads, "--output", o.to_str().unwrap()]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
        read_json(&o)
    };
    let a = run("1", "a.json");
    let b = run("3", "b.json");
    let sir_a = &a["report"]["estimators"][0];
    assert_eq!(sir_a["estimator"], "sir");
    assert_eq!(sir_a["errors"].as_array().unwrap().len(), 3);
    assert_eq!(sir_a["errors"], b["report"]["estimators"][0]["errors"]);
    assert_eq!(sir_a["mean"], b["report"]["estimators"][0]["mean"]);
    assert_eq!(a["spec"]["seed"], 11);

    let rows = fs::read_to_string(&csv_path).unwrap();
    assert_eq!(rows.lines().count(), 4);
    assert!(rows.starts_with("estimator,replicate,error,wall_time"));
}
