use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn dperm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dperm")).args(args).output().unwrap()
}

fn dperm_env(args: &[&str], key: &str, value: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dperm")).args(args).env(key, value).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn synth(dir: &TempDir, n: usize) -> PathBuf {
    let out = dir.path().join("data.csv");
    let o = dperm(&[
        "synth",
        "--n",
        &n.to_string(),
        "--d",
        "2",
        "--theta-star",
        "1.5,-1,0.5",
        "--seed",
        "11",
        "--out",
        path_str(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

#[test]
fn synth_writes_processed_csv_and_metadata() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, 40);
    let text = std::fs::read_to_string(&data).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("f0,f1,f2,label"));
    assert_eq!(lines.count(), 40);
    let meta = json(&dir.path().join("data.csv.meta.json"));
    assert_eq!(meta["seed"], 11);
    assert_eq!(meta["config"]["command"], "synth");
}

#[test]
fn evaluate_reports_coverage() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, 300);
    let out = dir.path().join("report.json");
    let plot = dir.path().join("plot.csv");
    let o = dperm(&[
        "evaluate",
        "--input",
        path_str(&data),
        "--c",
        "0.01",
        "--k",
        "8",
        "--mvi",
        "8",
        "--m",
        "200",
        "--seed",
        "3",
        "--workers",
        "2",
        "--out",
        path_str(&out),
        "--plot-data",
        path_str(&plot),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = json(&out);
    let coverage = report["coverage"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&coverage));
    assert_eq!(report["per_coordinate"].as_array().unwrap().len(), 3);
    assert!(report["mean_vi_length"].as_f64().unwrap() >= 0.0);
    assert_eq!(report["metadata"]["workers"], 2);
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.contains("coverage"));
    let plot = std::fs::read_to_string(plot).unwrap();
    assert!(plot.starts_with("x,ci_mean,ci_sd,vi_mean\n0.5,"));
}

#[test]
fn small_regularization_exits_with_budget_error() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, 50);
    // threshold t/(2n(e^ε − 1)) is about 0.024 here
    let o = dperm(&[
        "train", "--input", path_str(&data), "--mechanism", "obj", "--c", "1e-6", "--phi1", "0.1", "--seed", "1",
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn closed_form_on_objective_fit_is_a_mismatch() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, 200);
    let fit = dir.path().join("fit.json");
    let o = dperm(&[
        "train", "--input", path_str(&data), "--mechanism", "obj", "--c", "0.05", "--seed", "1", "--out",
        path_str(&fit),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = dperm(&[
        "ci", "--input", path_str(&data), "--fit", path_str(&fit), "--c", "0.05", "--method", "zcdp-closed",
        "--seed", "2",
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("mismatch"));
}

#[test]
fn train_then_ci_under_zcdp() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, 200);
    let fit = dir.path().join("fit.json");
    let common = ["--input", path_str(&data), "--privacy", "zcdp", "--c", "0.05", "--seed", "9"];
    let mut args = vec!["train"];
    args.extend(common);
    args.extend(["--out", path_str(&fit)]);
    let o = dperm(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let f = json(&fit);
    assert_eq!(f["mechanism"], "OutputPerturbZCDP");
    assert!(f["sigma2"].as_f64().unwrap() > 0.0);
    assert_eq!(f["n"], 200);
    assert_eq!(f["seed"], 9);
    assert_eq!(f["theta_tilde"].as_array().unwrap().len(), 3);

    let ci = dir.path().join("ci.json");
    let mut args = vec!["ci", "--fit", path_str(&fit), "--out", path_str(&ci)];
    args.extend(common);
    let o = dperm(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let c = json(&ci);
    assert_eq!(c["method"], "ClosedFormZCDP");
    assert_eq!(c["alpha"], 0.05);
    let lo = c["lo"].as_array().unwrap();
    let hi = c["hi"].as_array().unwrap();
    for (l, h) in lo.iter().zip(hi) {
        assert!(l.as_f64().unwrap() <= h.as_f64().unwrap());
    }
}

#[test]
fn runs_are_reproducible_from_the_echoed_config() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, 150);
    let first = dir.path().join("a.json");
    let o = dperm(&[
        "train", "--input", path_str(&data), "--loss", "huber", "--c", "0.02", "--seed", "5", "--out",
        path_str(&first),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let before = std::fs::read(&first).unwrap();
    let o = dperm(&[
        "train", "--input", path_str(&data), "--loss", "huber", "--c", "0.02", "--seed", "5", "--out",
        path_str(&first),
    ]);
    assert!(o.status.success());
    assert_eq!(std::fs::read(&first).unwrap(), before);

    // the echoed config, saved as a config file, reproduces the run
    let a = json(&first);
    let mut config: toml::Table = serde_json::from_value(a["metadata"]["config"].clone()).unwrap();
    let third = dir.path().join("c.json");
    config.insert("out".into(), toml::Value::String(path_str(&third).into()));
    let cfg_path = dir.path().join("run.toml");
    std::fs::write(&cfg_path, toml::to_string(&config).unwrap()).unwrap();
    let o = dperm(&["train", "--config", path_str(&cfg_path)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let c = json(&third);
    assert_eq!(a["theta_tilde"], c["theta_tilde"]);
    assert_eq!(a["gamma"], c["gamma"]);

    let o = dperm(&["train", "--config", path_str(&cfg_path), "--out", path_str(&first)]);
    assert!(o.status.success());
    let mut again = json(&first);
    again["metadata"]["config"]["out"] = a["metadata"]["config"]["out"].clone();
    assert_eq!(again, a);
}

#[test]
fn flags_override_config_file() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, 100);
    let cfg_path = dir.path().join("run.toml");
    std::fs::write(&cfg_path, format!("input = \"{}\"\nc = 0.5\nseed = 4\n", path_str(&data))).unwrap();
    let out = dir.path().join("fit.json");
    let o = dperm(&["train", "--config", path_str(&cfg_path), "--c", "0.25", "--out", path_str(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let f = json(&out);
    assert_eq!(f["c"], 0.25);
    assert_eq!(f["metadata"]["config"]["c"], 0.25);
    assert_eq!(f["seed"], 4);
}

#[test]
fn config_errors_exit_2_and_name_the_field() {
    let o = dperm(&["train", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("input"), "{}", stderr(&o));

    let dir = TempDir::new().unwrap();
    let data = synth(&dir, 20);
    let o = dperm(&["train", "--input", path_str(&data), "--phi3", "0", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("phi3"));

    let cfg_path = dir.path().join("bad.toml");
    std::fs::write(&cfg_path, "epsilon = 1.0\n").unwrap();
    let o = dperm(&["train", "--config", path_str(&cfg_path)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("epsilon"));
}

#[test]
fn missing_seed_is_drawn_and_printed() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, 60);
    let out = dir.path().join("fit.json");
    let o = dperm(&["train", "--input", path_str(&data), "--c", "0.05", "--out", path_str(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let err = stderr(&o);
    let printed: u64 = err.trim().rsplit(' ').next().unwrap().parse().unwrap();
    assert_eq!(json(&out)["seed"], printed);
}

#[test]
fn data_errors_exit_5() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "f0,f1,label\n0.9,0.9,1\n0.1,0.0,-1\n").unwrap();
    let o = dperm(&["train", "--input", path_str(&bad), "--seed", "1"]);
    assert_eq!(o.status.code(), Some(5), "{}", stderr(&o));
    let o = dperm(&["train", "--input", path_str(&dir.path().join("absent.csv")), "--seed", "1"]);
    assert_eq!(o.status.code(), Some(5));
}

#[test]
fn solver_failure_exits_4() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, 100);
    let o = dperm(&["train", "--input", path_str(&data), "--max-iter", "1", "--tol", "1e-14", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn raw_csv_with_schema() {
    let dir = TempDir::new().unwrap();
    let raw = dir.path().join("raw.csv");
    let mut text = String::from("age,color,hours,income\n");
    for i in 0..60 {
        let color = ["red", "green", "blue"][i % 3];
        let income = if (i * 7) % 5 < 2 { ">50K" } else { "<=50K" };
        text.push_str(&format!("{}, {color}, {}, {income}\n", 20 + i, 10 + (i * 13) % 50));
    }
    std::fs::write(&raw, text).unwrap();
    let schema = dir.path().join("schema.json");
    std::fs::write(
        &schema,
        r#"{"columns":[
            {"name":"age","kind":"numeric"},
            {"name":"color","kind":"categorical","categories":["red","green","blue"]},
            {"name":"hours","kind":"numeric"},
            {"name":"income","kind":"target"}]}"#,
    )
    .unwrap();
    let out = dir.path().join("fit.json");
    let o = dperm_env(
        &["train", "--input", path_str(&raw), "--schema", path_str(&schema), "--c", "0.05", "--seed", "2", "--out", path_str(&out)],
        "DPERM_LOG",
        "info",
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(json(&out)["theta_tilde"].as_array().unwrap().len(), 6);
    assert!(stderr(&o).contains("prepared 60 records"));
}
