use std::path::Path;
use std::process::{Command, Output};

fn mohets(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mohets"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run mohets")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

/// Trains a very small synthetic model into `dir`.
fn quick_train(dir: &Path, variates: &str) {
    let o = mohets(&[
        "train",
        "--synthetic",
        "--synthetic-variates",
        variates,
        "--synthetic-len",
        "900",
        "--lookback",
        "96",
        "--max-steps",
        "3",
        "--max-val-windows",
        "2",
        "--out",
        &s(dir),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn missing_data_file_exits_3_naming_path() {
    let o = mohets(&["train", "--data", "/nonexistent/series.csv", "--out", "/tmp/unused-mohets"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("/nonexistent/series.csv"));
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"model": {"d_modle": 64}}"#).unwrap();
    let o = mohets(&["train", "--synthetic", "--config", &s(&cfg), "--out", &s(&dir.path().join("run"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("d_modle"));
}

#[test]
fn unknown_ablation_axis_exits_2() {
    let o = mohets(&["ablate", "--axis", "bogus"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn corrupted_gradient_fixture_exits_4() {
    let o = mohets(&["gradcheck", "--skip-model", "--corrupt-fixture"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn corrupted_checkpoint_exits_3_naming_file() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("broken.bin");
    std::fs::write(&ckpt, b"not a checkpoint at all").unwrap();
    let o = mohets(&["eval", "--checkpoint", &s(&ckpt), "--synthetic", "--out", &s(&dir.path().join("e"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("broken.bin"));
}

#[test]
fn train_eval_forecast_write_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    quick_train(&run, "2");
    for f in ["manifest.json", "split.json", "train_log.jsonl", "best.bin", "final.bin"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let ckpt = s(&run.join("best.bin"));

    let eval_dir = dir.path().join("eval");
    let o = mohets(&["eval", "--checkpoint", &ckpt, "--horizons", "96", "--max-windows", "4", "--out", &s(&eval_dir)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(eval_dir.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("# manifest: "));
    assert!(eval_dir.join("manifest.json").is_file());
    // One horizon row plus the average, which must repeat it.
    assert_eq!(lines.len(), 4, "{csv}");
    let metrics = |l: &str| l.split(',').skip(2).take(2).map(String::from).collect::<Vec<_>>();
    assert_eq!(metrics(lines[2]), metrics(lines[3]));

    let fc_dir = dir.path().join("forecast");
    let o = mohets(&["forecast", "--checkpoint", &ckpt, "--horizon", "30", "--plot", "--out", &s(&fc_dir)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(fc_dir.join("forecast.csv")).unwrap();
    assert!(csv.starts_with("# manifest: "));
    // Long format: one row per timestamp and variate.
    assert_eq!(csv.lines().count(), 2 + 30 * 2);
    assert!(std::fs::read_dir(&fc_dir)
        .unwrap()
        .any(|e| e.unwrap().path().extension().is_some_and(|x| x == "svg")));
}

#[test]
fn forecast_rejects_short_series_stating_lookback() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    quick_train(&run, "1");
    let short = dir.path().join("short.csv");
    let mut text = String::from("date,x\n");
    for h in 0..40 {
        text.push_str(&format!("2021-01-0{} {:02}:00:00,{}\n", 1 + h / 24, h % 24, h));
    }
    std::fs::write(&short, text).unwrap();
    let o = mohets(&[
        "forecast",
        "--checkpoint",
        &s(&run.join("best.bin")),
        "--data",
        &s(&short),
        "--out",
        &s(&dir.path().join("f")),
    ]);
    assert_ne!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("96"), "{}", stderr(&o));
}

#[test]
fn variate_mismatch_with_covariates_fails() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    quick_train(&run, "2");
    let o = mohets(&[
        "eval",
        "--checkpoint",
        &s(&run.join("best.bin")),
        "--synthetic",
        "--synthetic-variates",
        "3",
        "--out",
        &s(&dir.path().join("e")),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}
