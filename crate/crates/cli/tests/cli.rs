use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relu-rate-lab"))
        .current_dir(dir)
        .env("RELU_RATE_LAB_THREADS", "2")
        .args(args)
        .output()
        .expect("spawn cli")
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const BOUNDS: [&str; 13] = ["--n", "1000", "--d", "50", "--sigma", "1", "--tau", "1", "--vs", "2", "--L", "2", "--epsilon"];

#[test]
fn bounds_report_and_config_echo() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["bounds"];
    args.extend_from_slice(&BOUNDS[..12]);
    let out = run(dir.path(), &args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&dir.path().join("out/bounds.json"));
    let lb = report["minimax_lb"].as_f64().unwrap();
    // (tau sigma / 320) sqrt(ln 50 / 1000) at 30 digits.
    assert!((lb - 1.95456771850924210575510648387e-4).abs() < 1e-17);
    assert!(report.get("sample_complexity").is_none());
    let config = read_json(&dir.path().join("out/config.json"));
    assert_eq!(config["command"], "bounds");
    assert_eq!(config["args"]["L"], 2);
}

#[test]
fn epsilon_adds_sample_complexity() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["complexity"];
    args.extend_from_slice(&BOUNDS);
    args.push("0.05");
    assert_eq!(run(dir.path(), &args).status.code(), Some(0));
    let report = read_json(&dir.path().join("out/bounds.json"));
    assert!(report["sample_complexity"].as_f64().unwrap() > 0.0);
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let mut small_d = vec!["bounds"];
    small_d.extend_from_slice(&BOUNDS[..12]);
    small_d[4] = "5";
    assert_eq!(run(dir.path(), &small_d).status.code(), Some(2));

    let mut no_eps = vec!["complexity"];
    no_eps.extend_from_slice(&BOUNDS[..12]);
    assert_eq!(run(dir.path(), &no_eps).status.code(), Some(2));

    assert_eq!(run(dir.path(), &["pack", "--d", "10", "--m", "2"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["scaling", "--config", "missing.json"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["frobnicate"]).status.code(), Some(2));

    std::fs::write(dir.path().join("one.csv"), "n,mean_error,std_error,count\n100,0.5,0,1\n").unwrap();
    assert_eq!(run(dir.path(), &["fit", "--series", "one.csv"]).status.code(), Some(2));
}

#[test]
fn pack_writes_basis_codebook() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["pack", "--d", "10", "--m", "1"]);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(dir.path().join("out/codebook.txt")).unwrap();
    let words: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(words.len(), 10);
    assert!(words.iter().all(|w| w.matches('1').count() == 1));
    let cert = std::fs::read_to_string(dir.path().join("out/certificate.csv")).unwrap();
    assert_eq!(cert.lines().count(), 1 + 45);
    assert!(read_json(&dir.path().join("out/ensemble.json"))["codewords"].is_array());
}

#[test]
fn verify_small_run_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["--format", "csv", "verify", "--samples", "100"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("out/lemmas.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 7);
}

#[test]
fn scaling_then_fit() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("sweep.json"),
        r#"{
  "spec": {"input_dim": 3, "hidden": [3], "budget_vs": 10.0, "budget_v0": 10.0},
  "teacher": {"kind": "random", "hidden": [3], "seed": 2},
  "sigma": 0.2,
  "n_grid": [32, 64, 128],
  "seeds": [1, 2],
  "test_size": 200,
  "train_config": {"epochs": 3, "batch_size": 8, "learning_rate": 0.01}
}"#,
    )
    .unwrap();
    let out = run(dir.path(), &["--output-dir", "s", "scaling", "--config", "sweep.json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_to_string(dir.path().join("s/series_rows.csv")).unwrap().lines().count(), 7);

    let out = run(dir.path(), &["--output-dir", "f", "fit", "--series", "s/series_aggregate.csv", "--weighted"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let verdict = read_json(&dir.path().join("f/fit.json"));
    assert!(verdict["winner"].is_string());
    assert!(verdict["fits"]["inv_sqrt_n"].is_object());
    let plot = std::fs::read_to_string(dir.path().join("f/fit_plot.csv")).unwrap();
    assert!(plot.starts_with("n,observed,fitted_sqrt,fitted_inv"));
}

#[test]
fn fit_recognizes_sqrt_decay() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("series.csv"),
        "n,mean_error,std_error,count\n100,4.0e-1,0,1\n400,2.5e-1,0,1\n2500,1.6e-1,0,1\n",
    )
    .unwrap();
    assert_eq!(run(dir.path(), &["fit", "--series", "series.csv"]).status.code(), Some(0));
    assert_eq!(read_json(&dir.path().join("out/fit.json"))["winner"], "inv_sqrt_n");
}
