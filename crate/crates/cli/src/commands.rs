use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use bmoe::data::{self, SynthConfig};
use bmoe::gradnorm::write_trace_csv;
use bmoe::io::write_atomic;
use bmoe::trainer::{self, aggregate, Fitted, SeedResult};
use bmoe::{Checkpoint, Model, MultiTaskModel, TaskMetrics};
use serde::Serialize;
use serde_json::Value;

use crate::config::RunConfig;
use crate::CliError;

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    write_atomic(path, bytes).map_err(|e| CliError::Data(e.to_string()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn print_metrics(names: &[String], metrics: &[TaskMetrics]) {
    println!("{:<12} {:>12} {:>12} {:>9}", "task", "rmse", "mae", "r2");
    for (n, m) in names.iter().zip(metrics) {
        println!("{:<12} {:>12.6} {:>12.6} {:>9.4}", n, m.rmse, m.mae, m.r2);
    }
}

fn fit(cfg: &RunConfig, split: &data::SplitDataset, verbose: bool) -> Result<Fitted<Model>, CliError> {
    let mut model = Model::build(cfg.kind, cfg.model.clone(), cfg.train.seed).map_err(CliError::from_run)?;
    let mut trainer = trainer::Trainer::new(&model, cfg.train.clone()).map_err(CliError::from_run)?;
    trainer::fit_with(&mut trainer, &mut model, split, |e, _| {
        if verbose {
            let val: Vec<String> = e.val.iter().map(|m| format!("{:.4}", m.rmse)).collect();
            eprintln!(
                "epoch {:>4} lr {:.0e} loss {:.5} weights {:.3?} val_rmse [{}]",
                e.epoch,
                e.lr,
                e.weighted_loss,
                e.weights,
                val.join(", ")
            );
        }
    })
    .map_err(CliError::from_run)
}

pub fn train(mut cfg: RunConfig, out: PathBuf, verbose: bool) -> Result<(), CliError> {
    let split = cfg.prepare()?;
    let fitted = fit(&cfg, &split, verbose)?;
    let report = &fitted.report;

    write_json(&out.join("config.json"), &cfg)?;
    write_json(&out.join("report.json"), report)?;
    let mut csv = Vec::new();
    report.write_epochs_csv(&mut csv).map_err(|e| CliError::Data(e.to_string()))?;
    write_file(&out.join("epochs.csv"), &csv)?;
    let ck = Checkpoint::capture(&fitted.best, Some(&split.normalization));
    ck.save(&out.join("model.json")).map_err(|e| CliError::Data(e.to_string()))?;
    if cfg.train.trace {
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &fitted.trace).map_err(|e| CliError::Data(e.to_string()))?;
        write_file(&out.join("trace.csv"), &buf)?;
    }

    println!("best epoch {} of {}; test metrics:", report.best_epoch, report.epochs.len());
    print_metrics(&report.task_names, &report.test);
    println!("wrote {}", out.display());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitChoice {
    Test,
    All,
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    task_names: &'a [String],
    rows: usize,
    metrics: &'a [TaskMetrics],
}

pub fn evaluate(cfg: RunConfig, model_path: &Path, split: SplitChoice, out: PathBuf) -> Result<(), CliError> {
    let ck = Checkpoint::load(model_path).map_err(|e| CliError::Config(e.to_string()))?;
    let norm = ck
        .normalization
        .clone()
        .ok_or_else(|| CliError::Config(format!("{}: checkpoint has no normalization", model_path.display())))?;
    let model = ck.restore().map_err(|e| CliError::Config(e.to_string()))?;
    let raw = cfg.load_raw()?;
    let part = match split {
        SplitChoice::All => raw,
        SplitChoice::Test => {
            let [_, _, test] = data::chronological_split(&raw).map_err(|e| CliError::Data(e.to_string()))?;
            test
        }
    };
    if part.num_features() != model.input_dim() || part.num_tasks() != model.num_tasks() {
        return Err(CliError::Config(format!(
            "data has {} features and {} targets; model expects {} and {}",
            part.num_features(),
            part.num_tasks(),
            model.input_dim(),
            model.num_tasks()
        )));
    }
    let normalized = norm.apply(&part).map_err(|e| CliError::Data(e.to_string()))?;
    let (y, yhat) = trainer::denormalized_predictions(&model, &normalized, &norm).map_err(CliError::from_run)?;
    let metrics = bmoe::metrics::per_task(&y, &yhat).map_err(CliError::from_run)?;

    let mut w = csv_writer();
    let mut header = vec!["row".to_string()];
    for n in &part.target_names {
        header.push(n.clone());
        header.push(format!("{n}_pred"));
    }
    w.write_record(&header).map_err(csv_err)?;
    for r in 0..y.rows() {
        let mut rec = vec![r.to_string()];
        for t in 0..y.cols() {
            rec.push(y.get(r, t).to_string());
            rec.push(yhat.get(r, t).to_string());
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    write_file(&out.join("predictions.csv"), &finish(w)?)?;
    write_json(
        &out.join("metrics.json"),
        &EvalOutput {
            task_names: &part.target_names,
            rows: part.len(),
            metrics: &metrics,
        },
    )?;
    print_metrics(&part.target_names, &metrics);
    Ok(())
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::Writer::from_writer(Vec::new())
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Data(e.to_string())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>, CliError> {
    w.into_inner().map_err(|e| CliError::Data(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepParam {
    Alpha,
    Lr,
    Experts,
    Batch,
}

impl SweepParam {
    fn name(self) -> &'static str {
        match self {
            SweepParam::Alpha => "alpha",
            SweepParam::Lr => "lr",
            SweepParam::Experts => "experts",
            SweepParam::Batch => "batch",
        }
    }

    fn key(self) -> &'static str {
        match self {
            SweepParam::Alpha => "train.alpha",
            SweepParam::Lr => "train.learning_rate",
            SweepParam::Experts => "model.num_experts",
            SweepParam::Batch => "train.batch_size",
        }
    }

    fn parse(self, raw: &str) -> Result<Value, CliError> {
        let bad = || CliError::Usage(format!("bad sweep value {raw:?} for {}", self.name()));
        match self {
            SweepParam::Alpha | SweepParam::Lr => {
                let v: f64 = raw.parse().map_err(|_| bad())?;
                serde_json::Number::from_f64(v).map(Value::Number).ok_or_else(bad)
            }
            SweepParam::Experts | SweepParam::Batch => raw.parse::<u64>().map(Value::from).map_err(|_| bad()),
        }
    }
}

#[derive(Serialize)]
struct SweepRow<'a> {
    param_value: &'a str,
    seed: u64,
    task: &'a str,
    rmse: f64,
    mae: f64,
    r2: f64,
    train_seconds: f64,
    infer_seconds: f64,
}

struct Cell {
    value: usize,
    seed: u64,
}

struct CellResult {
    test: Vec<TaskMetrics>,
    train_seconds: f64,
    infer_seconds: f64,
}

#[derive(Serialize)]
struct SweepFailure {
    param_value: String,
    seed: u64,
    exit_code: i32,
    error: String,
}

#[derive(Serialize)]
struct SweepSummaryRow {
    param_value: String,
    seeds: usize,
    mean: Vec<TaskMetrics>,
    std: Vec<TaskMetrics>,
}

#[derive(Serialize)]
struct SweepSummary {
    param: String,
    task_names: Vec<String>,
    values: Vec<SweepSummaryRow>,
    failures: Vec<SweepFailure>,
}

fn run_cell(cfg: &RunConfig, split: &data::SplitDataset) -> Result<CellResult, CliError> {
    let fitted = fit(cfg, split, false)?;
    let start = Instant::now();
    let _ = fitted.best.predict(&split.test.features).map_err(CliError::from_run)?;
    Ok(CellResult {
        test: fitted.report.test,
        train_seconds: fitted.report.train_seconds,
        infer_seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn sweep(
    mut cfg: RunConfig,
    param: SweepParam,
    values: &[String],
    seeds: usize,
    jobs: usize,
    out: PathBuf,
) -> Result<(), CliError> {
    if values.is_empty() || seeds == 0 {
        return Err(CliError::Usage("sweep needs at least one value and one seed".into()));
    }
    let split = cfg.prepare()?;
    let configs = values
        .iter()
        .map(|v| cfg.with_override(param.key(), param.parse(v)?))
        .collect::<Result<Vec<_>, _>>()?;
    let base = cfg.train.seed;
    let cells: Vec<Cell> = (0..values.len())
        .flat_map(|value| (0..seeds as u64).map(move |k| Cell { value, seed: base + k }))
        .collect();

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<CellResult, CliError>>>> =
        Mutex::new((0..cells.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, cells.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(cell) = cells.get(i) else { break };
                let mut c = configs[cell.value].clone();
                c.train.seed = cell.seed;
                let r = c
                    .model
                    .validate()
                    .map_err(|e| CliError::Config(e.to_string()))
                    .and_then(|_| run_cell(&c, &split));
                eprintln!(
                    "{}={} seed {}: {}",
                    param.name(),
                    values[cell.value],
                    cell.seed,
                    if r.is_ok() { "ok" } else { "failed" }
                );
                results.lock().expect("results lock")[i] = Some(r);
            });
        }
    });
    let results = results.into_inner().expect("results lock");

    let names = &split.train.target_names;
    let mut w = csv_writer();
    let mut failures = Vec::new();
    let mut per_value: Vec<Vec<SeedResult>> = (0..values.len()).map(|_| Vec::new()).collect();
    for (cell, r) in cells.iter().zip(results) {
        match r.expect("every cell ran") {
            Ok(res) => {
                for (t, m) in res.test.iter().enumerate() {
                    w.serialize(SweepRow {
                        param_value: &values[cell.value],
                        seed: cell.seed,
                        task: &names[t],
                        rmse: m.rmse,
                        mae: m.mae,
                        r2: m.r2,
                        train_seconds: res.train_seconds,
                        infer_seconds: res.infer_seconds,
                    })
                    .map_err(csv_err)?;
                }
                per_value[cell.value].push(SeedResult {
                    seed: cell.seed,
                    test: res.test,
                });
            }
            Err(e) => failures.push(SweepFailure {
                param_value: values[cell.value].clone(),
                seed: cell.seed,
                exit_code: e.exit_code(),
                error: e.to_string(),
            }),
        }
    }
    write_file(&out.join("sweep.csv"), &finish(w)?)?;

    let summary = SweepSummary {
        param: param.name().to_string(),
        task_names: names.clone(),
        values: values
            .iter()
            .zip(&per_value)
            .filter(|(_, runs)| !runs.is_empty())
            .map(|(v, runs)| {
                let (mean, std) = aggregate(runs);
                SweepSummaryRow {
                    param_value: v.clone(),
                    seeds: runs.len(),
                    mean,
                    std,
                }
            })
            .collect(),
        failures,
    };
    write_json(&out.join("sweep_summary.json"), &summary)?;

    println!("{:<10} {:<12} {:>10} {:>10}", "value", "task", "mean_r2", "std_r2");
    for row in &summary.values {
        for (t, n) in names.iter().enumerate() {
            println!("{:<10} {:<12} {:>10.4} {:>10.4}", row.param_value, n, row.mean[t].r2, row.std[t].r2);
        }
    }
    println!("wrote {}", out.display());
    if summary.failures.is_empty() {
        return Ok(());
    }
    for f in &summary.failures {
        eprintln!("failed: {}={} seed {}: {}", summary.param, f.param_value, f.seed, f.error);
    }
    let code = summary.failures.iter().map(|f| f.exit_code).max().unwrap_or(1);
    Err(CliError::Partial {
        code,
        msg: format!("{} of {} sweep cells failed", summary.failures.len(), cells.len()),
    })
}

/// Parses `a,b,...` into a weight vector.
pub fn parse_weights(raw: &str) -> Result<Vec<f64>, CliError> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("bad weight list {raw:?}")))
        })
        .collect()
}

pub const FIG6_WEIGHTS: [[f64; 2]; 5] = [[1.5, 0.5], [1.3, 0.7], [1.0, 1.0], [0.7, 1.3], [0.5, 1.5]];

fn trace_file_name(w: &[f64]) -> String {
    let parts: Vec<String> = w.iter().map(|v| format!("{v}")).collect();
    format!("trace_{}.csv", parts.join("-"))
}

pub fn trace_weights(mut cfg: RunConfig, weights: Vec<Vec<f64>>, out: PathBuf, verbose: bool) -> Result<(), CliError> {
    let split = cfg.prepare()?;
    let n = split.num_tasks();
    for w in &weights {
        if w.len() != n {
            return Err(CliError::Config(format!("weights {w:?}: expected {n} values")));
        }
        if w.iter().any(|&v| v.is_nan() || v <= 0.0) {
            return Err(CliError::Config(format!("weights {w:?}: every weight must be positive")));
        }
        if (w.iter().sum::<f64>() - n as f64).abs() > 1e-9 {
            return Err(CliError::Config(format!("weights {w:?}: must sum to {n}")));
        }
    }
    println!("{:<24} final weights", "initial");
    for w in weights {
        let mut c = cfg.clone();
        c.train.initial_task_weights = Some(w.clone());
        c.train.trace = true;
        let fitted = fit(&c, &split, verbose)?;
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &fitted.trace).map_err(|e| CliError::Data(e.to_string()))?;
        write_file(&out.join(trace_file_name(&w)), &buf)?;
        let last = fitted.report.epochs.last().map(|e| e.weights.clone()).unwrap_or_default();
        println!("{:<24} {:.4?}", format!("{w:?}"), last);
    }
    println!("wrote {}", out.display());
    Ok(())
}

pub fn gen_data(config: Option<&Path>, overrides: &[String], out: &Path) -> Result<(), CliError> {
    let mut doc = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => serde_json::to_value(SynthConfig::default()).expect("default serializes"),
    };
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got {o:?}")))?;
        crate::config::set_path(&mut doc, k.trim(), crate::config::parse_value(v.trim()))?;
    }
    let synth: SynthConfig = serde_json::from_value(doc).map_err(|e| CliError::Config(format!("config: {e}")))?;
    let d = data::gen_synthetic(&synth).map_err(|e| CliError::Config(e.to_string()))?;
    let mut buf = Vec::new();
    d.write_csv(&mut buf).map_err(|e| CliError::Data(e.to_string()))?;
    write_file(out, &buf)?;
    println!("wrote {} rows to {}", d.len(), out.display());
    Ok(())
}
