use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn bmoe(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bmoe"))
        .current_dir(dir)
        .env_remove("BMOE_OUT_ROOT")
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p).unwrap()
}

/// 300-row synthetic CSV plus quick training overrides.
fn fixture() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let o = bmoe(dir.path(), &["gen-data", "--out", "d.csv", "--set", "num_samples=300"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    dir
}

const QUICK: [&str; 4] = ["--set", "epochs=3", "--set", "model.expert_hidden=[8]"];

#[test]
fn gen_data_is_reproducible_and_sized() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.csv", "b.csv"] {
        assert_eq!(code(&bmoe(dir.path(), &["gen-data", "--out", name, "--set", "seed=42"])), 0);
    }
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.csv")).unwrap());
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 1001);
    assert!(text.ends_with('\n'));
    assert_eq!(text.lines().next().unwrap(), "x1,x2,x3,x4,x5,y1,y2");
}

#[test]
fn gen_data_identical_targets_at_full_relatedness() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("s.json"), r#"{"relatedness": 1.0, "noise_std": 0.0, "num_samples": 50}"#).unwrap();
    let o = bmoe(dir.path(), &["gen-data", "--config", "s.json", "--out", "d.csv"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for line in read(dir.path().join("d.csv")).lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[5], cells[6]);
    }
}

#[test]
fn gen_data_rejects_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = bmoe(dir.path(), &["gen-data", "--out", "d.csv", "--set", "relatedness=2"]);
    assert_eq!(code(&o), 1);
    let o = bmoe(dir.path(), &["gen-data", "--out", "d.csv", "--set", "rho=0.5"]);
    assert_eq!(code(&o), 1);
    assert!(!dir.path().join("d.csv").exists());
}

#[test]
fn train_writes_outputs_and_honours_overrides() {
    let dir = fixture();
    let mut args = vec!["train", "--data", "d.csv", "--out", "runs/a", "--set", "alpha=0.4", "--set", "lr=0.02"];
    args.extend(QUICK);
    let o = bmoe(dir.path(), &args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = dir.path().join("runs/a");
    for f in ["report.json", "epochs.csv", "model.json", "config.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let cfg: serde_json::Value = serde_json::from_str(&read(out.join("config.json"))).unwrap();
    assert_eq!(cfg["train"]["alpha"], 0.4);
    assert_eq!(cfg["train"]["learning_rate"], 0.02);
    assert_eq!(cfg["train"]["epochs"], 3);

    let epochs = read(out.join("epochs.csv"));
    assert_eq!(epochs.lines().next().unwrap(), "epoch,task,loss,weight,grad_norm,val_rmse,val_mae,val_r2");
    assert_eq!(epochs.lines().count(), 1 + 3 * 2);
    let report: serde_json::Value = serde_json::from_str(&read(out.join("report.json"))).unwrap();
    assert_eq!(report["epochs"].as_array().unwrap().len(), 3);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("y1") && stdout.contains("r2"));
    // nothing written outside --out
    let mut top: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    top.sort();
    assert_eq!(top, vec!["d.csv", "runs"]);
}

#[test]
fn config_file_and_defaults() {
    let dir = fixture();
    std::fs::write(
        dir.path().join("c.json"),
        r#"{"kind": "hard_shared", "train": {"epochs": 2}, "data": {"path": "d.csv"}}"#,
    )
    .unwrap();
    let o = bmoe(dir.path(), &["train", "--config", "c.json", "--out", "o"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ck: serde_json::Value = serde_json::from_str(&read(dir.path().join("o/model.json"))).unwrap();
    assert_eq!(ck["kind"], "hard_shared");

    std::fs::write(dir.path().join("bad.json"), r#"{"train": {"epoch": 2}}"#).unwrap();
    let o = bmoe(dir.path(), &["train", "--config", "bad.json", "--data", "d.csv"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("epoch"));
}

#[test]
fn out_root_env_sets_default_directory() {
    let dir = fixture();
    let mut args = vec!["train", "--data", "d.csv"];
    args.extend(QUICK);
    let o = Command::new(env!("CARGO_BIN_EXE_bmoe"))
        .current_dir(dir.path())
        .env("BMOE_OUT_ROOT", "root")
        .args(&args)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(dir.path().join("root/train/model.json").exists());
}

#[test]
fn missing_data_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = bmoe(dir.path(), &["train", "--data", "absent.csv", "--out", "o"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("absent.csv"));
    let o = bmoe(dir.path(), &["train", "--out", "o"]);
    assert_eq!(code(&o), 1, "no data source is a config error");
}

#[test]
fn missing_column_is_data_error() {
    let dir = fixture();
    let o = bmoe(dir.path(), &["train", "--data", "d.csv", "--set", "data.targets=[\"y1\",\"y9\"]"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("y9"));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&bmoe(dir.path(), &["train", "--bogus"])), 1);
    assert_eq!(code(&bmoe(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&bmoe(dir.path(), &["train", "--set", "novalue"])), 1);
    assert_eq!(code(&bmoe(dir.path(), &["--help"])), 0);
}

#[test]
fn divergence_exits_three() {
    let dir = fixture();
    let o = bmoe(
        dir.path(),
        &["train", "--data", "d.csv", "--out", "o", "--set", "lr=1e200", "--set", "epochs=3", "--set", "optimizer=\"sgd\""],
    );
    assert_eq!(code(&o), 1, "unknown top-level key is rejected: {}", stderr(&o));
    let o = bmoe(
        dir.path(),
        &["train", "--data", "d.csv", "--out", "o", "--set", "lr=1e200", "--set", "epochs=3", "--set", "train.optimizer=sgd"],
    );
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("task") && stderr(&o).contains("step"));
}

#[test]
fn evaluate_reproduces_train_test_metrics() {
    let dir = fixture();
    let mut args = vec!["train", "--data", "d.csv", "--out", "t"];
    args.extend(QUICK);
    assert_eq!(code(&bmoe(dir.path(), &args)), 0);
    let o = bmoe(dir.path(), &["evaluate", "--data", "d.csv", "--model", "t/model.json", "--out", "e"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&read(dir.path().join("t/report.json"))).unwrap();
    let metrics: serde_json::Value = serde_json::from_str(&read(dir.path().join("e/metrics.json"))).unwrap();
    for t in 0..2 {
        for k in ["rmse", "mae", "r2"] {
            let a = report["test"][t][k].as_f64().unwrap();
            let b = metrics["metrics"][t][k].as_f64().unwrap();
            assert!((a - b).abs() < 1e-12, "{k}: {a} vs {b}");
        }
    }
    assert_eq!(metrics["rows"], 60);
    let preds = read(dir.path().join("e/predictions.csv"));
    assert_eq!(preds.lines().next().unwrap(), "row,y1,y1_pred,y2,y2_pred");
    assert_eq!(preds.lines().count(), 61);

    let o = bmoe(dir.path(), &["evaluate", "--data", "d.csv", "--model", "t/model.json", "--split", "all", "--out", "e2"]);
    assert_eq!(code(&o), 0);
    assert_eq!(read(dir.path().join("e2/predictions.csv")).lines().count(), 301);
}

#[test]
fn sweep_rows_cover_grid() {
    let dir = fixture();
    let mut args = vec![
        "sweep", "--data", "d.csv", "--out", "s", "--param", "alpha", "--values", "0,0.1,0.3,0.5,1,2,3", "--seeds", "2",
        "--jobs", "3", "--set", "epochs=1",
    ];
    args.extend(["--set", "model.expert_hidden=[4]"]);
    let o = bmoe(dir.path(), &args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = read(dir.path().join("s/sweep.csv"));
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "param_value,seed,task,rmse,mae,r2,train_seconds,infer_seconds"
    );
    assert_eq!(lines.count(), 7 * 2 * 2);
    let values: Vec<&str> = text.lines().skip(1).step_by(4).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(values, vec!["0", "0.1", "0.3", "0.5", "1", "2", "3"]);
}

#[test]
fn single_cell_sweep_matches_train() {
    let dir = fixture();
    let mut args = vec!["train", "--data", "d.csv", "--out", "t", "--set", "alpha=0.3"];
    args.extend(QUICK);
    assert_eq!(code(&bmoe(dir.path(), &args)), 0);
    let mut args = vec!["sweep", "--data", "d.csv", "--out", "s", "--param", "alpha", "--values", "0.3"];
    args.extend(QUICK);
    let o = bmoe(dir.path(), &args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&read(dir.path().join("t/report.json"))).unwrap();
    let rows: Vec<Vec<String>> = read(dir.path().join("s/sweep.csv"))
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect();
    assert_eq!(rows.len(), 2);
    for (t, row) in rows.iter().enumerate() {
        let r2: f64 = row[5].parse().unwrap();
        assert_eq!(r2, report["test"][t]["r2"].as_f64().unwrap());
    }
}

#[test]
fn sweep_failures_are_listed_and_sweep_continues() {
    let dir = fixture();
    let o = bmoe(
        dir.path(),
        &["sweep", "--data", "d.csv", "--out", "s", "--param", "batch", "--values", "0,16", "--set", "epochs=1"],
    );
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("batch=0"));
    assert_eq!(read(dir.path().join("s/sweep.csv")).lines().count(), 1 + 2);
    let summary: serde_json::Value = serde_json::from_str(&read(dir.path().join("s/sweep_summary.json"))).unwrap();
    assert_eq!(summary["failures"].as_array().unwrap().len(), 1);
    assert_eq!(summary["failures"][0]["param_value"], "0");
}

#[test]
fn trace_weights_default_settings() {
    let dir = fixture();
    let o = bmoe(dir.path(), &["trace-weights", "--data", "d.csv", "--out", "tr", "--set", "epochs=2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut names: Vec<String> = std::fs::read_dir(dir.path().join("tr"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(
        names,
        vec!["trace_0.5-1.5.csv", "trace_0.7-1.3.csv", "trace_1-1.csv", "trace_1.3-0.7.csv", "trace_1.5-0.5.csv"]
    );
    let even = read(dir.path().join("tr/trace_1-1.csv"));
    let rows: Vec<Vec<String>> = even.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows[0][6], "1.0");
    assert_eq!(rows[1][6], "1.0");
    for name in &names {
        let text = read(dir.path().join("tr").join(name));
        let rows: Vec<Vec<f64>> = text
            .lines()
            .skip(1)
            .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
            .collect();
        for pair in rows.chunks(2) {
            assert_eq!(pair[0][0], pair[1][0], "rows grouped by step");
            assert!((pair[0][6] + pair[1][6] - 2.0).abs() < 1e-9);
        }
    }
}

#[test]
fn trace_weights_rejects_bad_vectors() {
    let dir = fixture();
    for bad in ["1.2,1.2", "2.5,-0.5", "2", "a,b"] {
        let o = bmoe(dir.path(), &["trace-weights", "--data", "d.csv", "--out", "tr", "--weights", bad]);
        assert_eq!(code(&o), 1, "{bad}: {}", stderr(&o));
    }
}
