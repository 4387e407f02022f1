use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn arsv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_arsv"))
        .args(args)
        .env("ARSV_THREADS", "2")
        .output()
        .expect("run arsv")
}

fn code(args: &[&str]) -> i32 {
    arsv(args).status.code().unwrap()
}

const SMALL: &str = r#"{
  "moneyness": [1.0, 0.9],
  "maturities": [4, 8],
  "j": 4,
  "n_eval_paths": 5,
  "n_mc": 200,
  "methods": ["lrm-mmm-kalman", "lrm-mc-hlik", "duan-mmm-kalman", "bs"]
}"#;

#[test]
fn configuration_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.json");
    assert_eq!(code(&["experiment", "--config", missing.to_str().unwrap()]), 1);
    assert_eq!(code(&["experiment"]), 1);

    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{\n  \"n_mc\": 10,\n  \"colour\": 1\n}").unwrap();
    let out = arsv(&["experiment", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"));

    let model = tmp.path().join("model.json");
    fs::write(&model, r#"{"r": 0.0, "gamma": -0.8, "phi": 1.5, "sigma_w": 0.6}"#).unwrap();
    assert_eq!(code(&["moments", "--config", model.to_str().unwrap()]), 1);

    let out = Command::new(env!("CARGO_BIN_EXE_arsv"))
        .arg("moments")
        .env("ARSV_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn moments_prints_the_benchmark_values() {
    let out = arsv(&["moments"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("var_y,kurtosis_y,mean_b,var_b,annualized_vol"));
    let row: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert!((row[0] - 9.019e-4).abs() < 1e-6);
    assert!((row[1] - 33.0).abs() < 0.05);
    assert!((row[2] + 8.21).abs() < 1e-9);

    let json = arsv(&["moments", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    assert!((v["kurtosis_y"].as_f64().unwrap() - row[1]).abs() < 1e-12);
}

#[test]
fn simulate_filter_and_hedge_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    assert_eq!(code(&["simulate", "--paths", "2", "--horizon", "12", "--seed", "4", "--out", sim.to_str().unwrap()]), 0);
    let price = sim.join("path_00001.csv");
    assert!(sim.join("path_00000.csv").is_file() && price.is_file());
    let price = price.to_str().unwrap();

    let out = arsv(&["filter", "--input", price, "--filter", "kalman"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("step,sigma_hat,sigma"));
    assert!(text.lines().count() >= 13);
    assert_eq!(code(&["filter", "--input", price, "--filter", "median"]), 1);

    let out = arsv(&["hedge", "--input", price, "--strike", "100", "--method", "lrm-mmm-hlik", "--n-mc", "300"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(run["ratios"].as_array().unwrap().len(), 12);
    assert!(run["terminal_error"].as_f64().unwrap() >= 0.0);
    assert_eq!(code(&["hedge", "--input", price, "--strike", "100", "--method", "lrm-xyz"]), 1);
}

fn read_rows(file: &Path) -> Vec<BTreeMap<String, String>> {
    let mut r = csv::Reader::from_path(file).unwrap();
    let headers = r.headers().unwrap().clone();
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            headers.iter().zip(rec.iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect()
        })
        .collect()
}

#[test]
fn experiment_writes_consistent_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("exp.json");
    fs::write(&cfg, SMALL).unwrap();
    let out_dir = tmp.path().join("report");
    let out = arsv(&["experiment", "--config", cfg.to_str().unwrap(), "--seed", "11", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["summary.csv", "paths.csv", "plot_moneyness_1.csv", "plot_moneyness_0.9.csv", "manifest.json"] {
        assert!(out_dir.join(f).is_file(), "missing {f}");
    }

    let summary = read_rows(&out_dir.join("summary.csv"));
    let paths = read_rows(&out_dir.join("paths.csv"));
    assert_eq!(summary.len(), 4 * 2 * 2);
    assert_eq!(paths.len(), 4 * 2 * 2 * 5);
    for cell in &summary {
        let errors: Vec<f64> = paths
            .iter()
            .filter(|p| p["method"] == cell["method"] && p["maturity"] == cell["maturity"] && p["moneyness"] == cell["moneyness"])
            .filter_map(|p| p["error"].parse().ok())
            .collect();
        let mse = errors.iter().sum::<f64>() / errors.len() as f64;
        assert_eq!(mse.to_string(), cell["mse"], "cell {cell:?}");
        assert_eq!(errors.len().to_string(), cell["n"]);
    }

    let plot = read_rows(&out_dir.join("plot_moneyness_1.csv"));
    assert_eq!(plot.len(), 2 * 4);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 11);

    let json_dir = tmp.path().join("json");
    let out = arsv(&[
        "experiment", "--config", cfg.to_str().unwrap(), "--seed", "11", "--format", "json", "--out", json_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let cells: serde_json::Value = serde_json::from_str(&fs::read_to_string(json_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(cells.as_array().unwrap().len(), summary.len());
    for (c, row) in cells.as_array().unwrap().iter().zip(&summary) {
        assert_eq!(c["mse"].as_f64().unwrap(), row["mse"].parse::<f64>().unwrap());
    }
}

#[test]
fn repeated_runs_are_byte_identical_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("exp.json");
    fs::write(&cfg, SMALL).unwrap();
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let dir = tmp.path().join(format!("t{threads}"));
        let status = Command::new(env!("CARGO_BIN_EXE_arsv"))
            .args(["experiment", "--config", cfg.to_str().unwrap(), "--seed", "2", "--threads", threads])
            .arg("--out")
            .arg(&dir)
            .status()
            .unwrap();
        assert!(status.success());
        let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(&dir)
            .unwrap()
            .map(|e| e.unwrap())
            .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap()))
            .collect();
        files.sort();
        outputs.push(files);
    }
    assert_eq!(outputs[0], outputs[1]);
}
