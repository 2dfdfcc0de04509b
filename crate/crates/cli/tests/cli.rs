use serde_json::Value;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use tempfile::TempDir;

const SHORT_CHAIN: &str = r#"{"chain": {"n_iters": 1200, "burn_in": 400, "thin": 4, "temperatures": [0.5, 1.0]}}"#;

fn lxspline(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lxspline")).args(args).output().unwrap()
}

fn error_kind(out: &Output) -> String {
    assert!(!out.status.success());
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    err["error"]["kind"].as_str().unwrap().to_string()
}

fn write_data(dir: &Path) -> String {
    let mut text = String::from("x,y\n");
    for i in 0..50 {
        let x = 2.0 + 3.0 * i as f64 / 49.0;
        // deterministic wiggle standing in for noise
        let y = (2.0 * x).sin() + 0.2 * ((i * 7919) % 13) as f64 / 13.0;
        text.push_str(&format!("{x},{y}\n"));
    }
    let p = dir.join("data.csv");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("config.json");
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn fit_is_deterministic_and_summary_is_ordered() {
    let dir = TempDir::new().unwrap();
    let data = write_data(dir.path());
    let cfg = write_config(dir.path(), SHORT_CHAIN);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = lxspline(&["fit", "--data", &data, "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "11"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let da = fs::read(a.join("draws.jsonl")).unwrap();
    assert!(!da.is_empty());
    assert_eq!(da, fs::read(b.join("draws.jsonl")).unwrap());
    assert_eq!(fs::read(a.join("summary.csv")).unwrap(), fs::read(b.join("summary.csv")).unwrap());
    assert_eq!(da.iter().filter(|&&c| c == b'\n').count(), 200);
    let diag: Value = serde_json::from_slice(&fs::read(a.join("diagnostics.json")).unwrap()).unwrap();
    assert!(diag.is_object());

    let mut rdr = csv::Reader::from_path(a.join("summary.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["x", "mean", "lower", "upper"]);
    let rows: Vec<Vec<f64>> =
        rdr.records().map(|r| r.unwrap().iter().map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 200);
    assert_eq!(rows[0][0], 2.0);
    assert!((rows[199][0] - 5.0).abs() < 1e-12);
    for r in &rows {
        assert!(r[2] <= r[1] && r[1] <= r[3], "{r:?}");
    }

    let c = dir.path().join("c");
    let o = lxspline(&["fit", "--data", &data, "--config", &cfg, "--out", c.to_str().unwrap(), "--seed", "12"]);
    assert!(o.status.success());
    assert_ne!(da, fs::read(c.join("draws.jsonl")).unwrap());
}

#[test]
fn malformed_rows_report_their_line() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("bad.csv");
    fs::write(&p, "x,y\n0.1,1\n0.2,2\n0.3,oops\n").unwrap();
    let o = lxspline(&["fit", "--data", p.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(error_kind(&o), "parse");
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 4"));

    fs::write(&p, "x,y\n0.1,1\n0.2\n").unwrap();
    let o = lxspline(&["fit", "--data", p.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(error_kind(&o), "parse");
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));

    fs::write(&p, "a,b\n0.1,1\n").unwrap();
    let o = lxspline(&["fit", "--data", p.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(error_kind(&o), "parse");
}

#[test]
fn too_little_data_is_rejected() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("d.csv");
    let out = dir.path().join("o");
    for text in ["", "x,y\n", "x,y\n1,2\n2,3\n3,1\n"] {
        fs::write(&p, text).unwrap();
        let o = lxspline(&["fit", "--data", p.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(error_kind(&o), "insufficient_data", "{text:?}");
    }
}

#[test]
fn bad_configs_are_rejected() {
    let dir = TempDir::new().unwrap();
    let data = write_data(dir.path());
    let out = dir.path().join("o");
    for body in [r#"{"bogus": 1}"#, r#"{"model": {"m": 0.0}}"#, "not json"] {
        let cfg = write_config(dir.path(), body);
        let o = lxspline(&["fit", "--data", &data, "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(error_kind(&o), "config", "{body}");
    }
    let cfg = write_config(dir.path(), r#"{"interval": [3.0, 4.0]}"#);
    let o = lxspline(&["fit", "--data", &data, "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    let o = lxspline(&["fit", "--data", dir.path().join("missing.csv").to_str().unwrap(), "--out", "x"]);
    assert_eq!(error_kind(&o), "io");
}

#[test]
fn shape_test_writes_report() {
    let dir = TempDir::new().unwrap();
    let data = write_data(dir.path());
    let cfg = write_config(dir.path(), SHORT_CHAIN);
    let out = dir.path().join("o");
    let o = lxspline(&[
        "test", "--data", &data, "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "5", "--hyp1",
        "monotone", "--hyp2", "complement",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    let n1 = report["n1"].as_u64().unwrap();
    let n2 = report["n2"].as_u64().unwrap();
    assert_eq!(n1 + n2, report["draws"].as_u64().unwrap());
    assert_eq!(n1 + n2, 200);
    assert!(out.join("draws.jsonl").exists());
    assert!(out.join("summary.csv").exists());

    let o = lxspline(&[
        "test", "--data", &data, "--out", out.to_str().unwrap(), "--hyp1", "exactly(1)", "--hyp2", "has-extrema(1)",
    ]);
    assert_eq!(error_kind(&o), "spec");
}

#[test]
fn simulate_writes_one_row_per_replicate() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), r#"{"chain": {"n_iters": 600, "burn_in": 200, "thin": 4, "temperatures": [0.5, 1.0]}}"#);
    let out = dir.path().join("o");
    let o = lxspline(&["simulate", "--scenario", "f4-lownoise", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let mut rdr = csv::Reader::from_path(out.join("replicates.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let (imse_col, mono_col) = (col("imse"), col("bf_monotone"));
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 10);
    let mean = |c: usize| rows.iter().map(|r| r[c].parse::<f64>().unwrap()).sum::<f64>() / rows.len() as f64;

    let summary: Value = serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["replicates"], 10);
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + b.abs());
    assert!(close(summary["imse"]["mean"].as_f64().unwrap(), mean(imse_col)));
    if let Some(m) = summary["bf_monotone"]["mean"].as_f64() {
        assert!(close(m, mean(mono_col)));
    }

    let o = lxspline(&["simulate", "--scenario", "f99-lownoise", "--out", out.to_str().unwrap()]);
    assert_eq!(error_kind(&o), "lookup");
}
