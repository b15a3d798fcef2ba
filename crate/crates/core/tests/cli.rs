mod common;

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

use common::{table1_path, TABLE1_FLAGS};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_frailcp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn fit_args<'a>(input: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut a = vec!["fit", input];
    a.extend(TABLE1_FLAGS);
    a.extend_from_slice(extra);
    a
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn fit_without_frailty() {
    let input = table1_path();
    let report = json(&run(&fit_args(input.to_str().unwrap(), &[])));
    let best = &report["result"]["best"];
    assert_eq!(best["taus"][0].as_f64(), Some(50.0));
    assert!((best["beta"][0][0].as_f64().unwrap() - 0.07).abs() < 0.005);
    assert!((best["beta"][1][0].as_f64().unwrap() + 0.76).abs() < 0.005);
    assert!(best["theta"].is_null());
    assert_eq!(report["candidates"].as_u64(), Some(11));
    assert_eq!(report["config"]["search"]["k"].as_u64(), Some(1));
    assert_eq!(report["config"]["search"]["em"]["ties"], "efron");
}

#[test]
fn fit_with_frailty() {
    let input = table1_path();
    let report = json(&run(&fit_args(input.to_str().unwrap(), &["--frailty"])));
    let best = &report["result"]["best"];
    assert_eq!(best["taus"][0].as_f64(), Some(80.0));
    let theta: Vec<f64> = serde_json::from_value(best["theta"].clone()).unwrap();
    assert!(theta[0] < 1e-3 && (theta[1] - 1.78).abs() < 0.01);
    assert_eq!(best["v_hat"].as_array().unwrap().len(), 2);
    let l1 = best["loglik_l1"].as_f64().unwrap();
    let l2 = best["loglik_l2"].as_f64().unwrap();
    assert_eq!(best["loglik_total"].as_f64().unwrap(), l1 + l2);
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn all_censored_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(
        dir.path(),
        "censored.csv",
        "time,event,cluster,x\n1,0,a,0\n2,0,b,1\n3,0,a,1\n",
    );
    let out = run(&["fit", &path, "--covariates", "x"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no event times"));
}

#[test]
fn missing_input_exits_2() {
    let out = run(&["fit", "/nonexistent/data.csv", "--covariates", "x"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["km", "/nonexistent/data.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_column_exits_2() {
    let input = table1_path();
    let out = run(&["fit", input.to_str().unwrap(), "--covariates", "nope"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_flags_exit_2() {
    let input = table1_path();
    let input = input.to_str().unwrap();
    assert_eq!(run(&fit_args(input, &["--k", "0"])).status.code(), Some(2));
    assert_eq!(run(&fit_args(input, &["--theta-update", "fixed"])).status.code(), Some(2));
    assert_eq!(run(&fit_args(input, &["--ties", "exact"])).status.code(), Some(2));
    assert_eq!(run(&["--threads", "0", "km", input]).status.code(), Some(2));
}

#[test]
fn custom_scenario_validation() {
    let out = run(&["simulate", "--scenario", "custom", "--tau-true", "600"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["simulate", "--scenario", "7"]);
    assert_eq!(out.status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "bad.json", "{\"n\": 3}");
    let out = run(&["simulate", "--scenario", "custom", "--config", &path]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_table_is_reproducible() {
    let args = ["simulate", "--scenario", "1", "--replications", "2", "--seed", "42", "--n", "120"];
    let first = run(&args);
    let report = json(&first);
    assert_eq!(report["config"]["scenario"]["seed"].as_u64(), Some(42));
    assert_eq!(report["config"]["scenario"]["replications"].as_u64(), Some(2));
    let rows = report["table"]["rows"].as_array().unwrap();
    let frailty_rows = rows.iter().filter(|r| r["model"] == "frailty").count();
    assert_eq!((rows.len() - frailty_rows, frailty_rows), (3, 5));
    assert_eq!(run(&args).stdout, first.stdout);
}

#[test]
fn simulate_csv_carries_config() {
    let out = run(&[
        "simulate", "--scenario", "1", "--replications", "1", "--n", "100", "--format", "csv",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# config: {"));
    assert!(lines.next().unwrap().starts_with("# failures:"));
    assert_eq!(lines.next(), Some("parameter,model,bias,mse,n"));
}

#[test]
fn km_with_annotations() {
    let dir = tempfile::tempdir().unwrap();
    let input = table1_path();
    let input = input.to_str().unwrap();
    let plain = dir.path().join("plain.json");
    let frail = dir.path().join("frail.json");
    assert!(run(&fit_args(input, &["--output", plain.to_str().unwrap()])).status.success());
    let frailty = ["--frailty", "--output", frail.to_str().unwrap()];
    assert!(run(&fit_args(input, &frailty)).status.success());

    let mut km = vec!["km", input];
    km.extend(TABLE1_FLAGS);
    km.extend(["--annotate", plain.to_str().unwrap(), "--annotate", frail.to_str().unwrap()]);
    let report = json(&run(&km));
    let curves = report["curves"].as_array().unwrap();
    assert_eq!(curves.len(), 2);
    for c in curves {
        let marks: Vec<(String, f64)> = c["annotations"]
            .as_array()
            .unwrap()
            .iter()
            .map(|a| (a["label"].as_str().unwrap().to_string(), a["time"].as_f64().unwrap()))
            .collect();
        assert_eq!(marks, [("no-frailty".to_string(), 50.0), ("frailty".to_string(), 80.0)]);
    }

    km.extend(["--format", "csv"]);
    let out = run(&km);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("# annotation: no-frailty 50\n# annotation: frailty 80\n"));
    let curves = frailcp::km::parse_curves(text.as_bytes(), frailcp::km::CurveFormat::Csv).unwrap();
    assert_eq!(curves[0].group, "treatment=0");
    assert!((curves[0].survival_at(25.0) - 13.0 / 14.0).abs() < 1e-12);
}

#[test]
fn annotation_file_must_be_a_fit_report() {
    let dir = tempfile::tempdir().unwrap();
    let bogus = write(dir.path(), "x.json", "{}");
    let input = table1_path();
    let mut km = vec!["km", input.to_str().unwrap()];
    km.extend(TABLE1_FLAGS);
    km.extend(["--annotate", bogus.as_str()]);
    assert_eq!(run(&km).status.code(), Some(2));
}

#[test]
fn output_file_matches_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let input = table1_path();
    let input = input.to_str().unwrap();
    let path = dir.path().join("report.json");
    let stdout = run(&fit_args(input, &[])).stdout;
    assert!(run(&fit_args(input, &["-o", path.to_str().unwrap()])).status.success());
    assert_eq!(std::fs::read(&path).unwrap(), stdout);
}

#[test]
fn help_exits_0() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&[]).status.code(), Some(2));
}
