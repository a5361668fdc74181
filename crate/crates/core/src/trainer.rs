//! Training loop: batched forward, per-task MSE losses, gradient-norm task
//! balancing on the anchor layer, optimizer updates, step learning-rate
//! decay, best-validation tracking, and multi-seed aggregation.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::autodiff::{grad_l2_norm, ParamStore, Tape, Var};
use crate::baselines::{Model, ModelKind};
use crate::data::{Dataset, Normalization, SplitDataset};
use crate::error::{Error, Result};
use crate::gradnorm::{BalanceSnapshot, TaskWeights, TraceRow};
use crate::layers::{ForwardCtx, Mode, MultiTaskModel};
use crate::matrix::Matrix;
use crate::metrics::{per_task, TaskMetrics};
use crate::mmoe::MmoeConfig;
use crate::optim::{Optimizer, OptimizerKind};
use crate::rng::{derive_seed, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Zero-based epoch from which the decayed rate applies.
    pub lr_decay_epoch: usize,
    pub lr_decay_factor: f64,
    pub alpha: f64,
    /// Task-weight step size; the learning rate when unset.
    pub lambda: Option<f64>,
    /// All ones when unset.
    pub initial_task_weights: Option<Vec<f64>>,
    pub seed: u64,
    pub gradnorm_enabled: bool,
    pub optimizer: OptimizerKind,
    pub shuffle: bool,
    /// Keep one trace row per task per step.
    pub trace: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 64,
            learning_rate: 0.01,
            weight_decay: 0.001,
            lr_decay_epoch: 100,
            lr_decay_factor: 0.1,
            alpha: 0.3,
            lambda: None,
            initial_task_weights: None,
            seed: 0,
            gradnorm_enabled: true,
            optimizer: OptimizerKind::Adam,
            shuffle: false,
            trace: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, num_tasks: usize) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::contract("batch_size must be >= 1"));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::contract("learning_rate must be > 0 and weight_decay >= 0"));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::contract("lr_decay_factor must lie in (0, 1]"));
        }
        if let Some(w) = &self.initial_task_weights {
            if w.len() != num_tasks {
                return Err(Error::contract(format!(
                    "{} initial task weights for {num_tasks} tasks",
                    w.len()
                )));
            }
        }
        self.task_weights(num_tasks).map(|_| ())
    }

    pub fn lambda(&self) -> f64 {
        self.lambda.unwrap_or(self.learning_rate)
    }

    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        if epoch >= self.lr_decay_epoch {
            self.learning_rate * self.lr_decay_factor
        } else {
            self.learning_rate
        }
    }

    fn task_weights(&self, n: usize) -> Result<TaskWeights> {
        let init = self.initial_task_weights.clone().unwrap_or_else(|| vec![1.0; n]);
        TaskWeights::new(init, self.alpha, self.lambda())
    }
}

/// What one optimization step produced.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub losses: Vec<f64>,
    /// Σ w_i L_i with the weights in force during the step.
    pub weighted_loss: f64,
    pub balance: Option<BalanceSnapshot>,
}

/// Owns the optimizer, task weights and dropout stream for one model.
pub struct Trainer {
    cfg: TrainConfig,
    optimizer: Optimizer,
    task_weights: TaskWeights,
    rng: Rng,
    step: usize,
    balance_calls: usize,
    trace: Vec<TraceRow>,
}

impl Trainer {
    pub fn new<M: MultiTaskModel>(model: &M, cfg: TrainConfig) -> Result<Self> {
        cfg.validate(model.num_tasks())?;
        Ok(Trainer {
            optimizer: Optimizer::new(cfg.optimizer, cfg.weight_decay, model.params()),
            task_weights: cfg.task_weights(model.num_tasks())?,
            rng: Rng::new(derive_seed(cfg.seed, 0xD50F)),
            step: 0,
            balance_calls: 0,
            trace: Vec::new(),
            cfg,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn weights(&self) -> &[f64] {
        &self.task_weights.weights
    }

    pub fn task_weights(&self) -> &TaskWeights {
        &self.task_weights
    }

    pub fn steps(&self) -> usize {
        self.step
    }

    /// Number of steps that went through task balancing.
    pub fn balance_calls(&self) -> usize {
        self.balance_calls
    }

    pub fn take_trace(&mut self) -> Vec<TraceRow> {
        std::mem::take(&mut self.trace)
    }

    fn balancing<M: MultiTaskModel>(&self, model: &M) -> bool {
        self.cfg.gradnorm_enabled && !model.anchor().is_empty()
    }

    pub fn train_step<M: MultiTaskModel>(&mut self, model: &mut M, x: &Matrix, y: &Matrix, lr: f64) -> Result<StepOutcome> {
        if x.rows() == 0 {
            return Err(Error::contract("empty batch"));
        }
        let n = model.num_tasks();
        let mut tape = Tape::new();
        let mut ctx = ForwardCtx {
            mode: Mode::Train,
            rng: &mut self.rng,
        };
        let preds = model.forward(&mut tape, x, &mut ctx)?;
        let task_losses = task_loss_nodes(&mut tape, &preds, y)?;
        let losses: Vec<f64> = task_losses.iter().map(|&l| tape.value(l).item()).collect();
        if let Some(task) = losses.iter().position(|l| !l.is_finite()) {
            return Err(Error::NonFinite { task, step: self.step });
        }
        let weights = self.task_weights.weights.clone();
        let weighted_loss = losses.iter().zip(&weights).map(|(l, w)| l * w).sum();

        let balance = if self.balancing(model) {
            let anchor = model.anchor();
            let store = model.params_mut();
            let mut total: Option<Vec<Matrix>> = None;
            let mut norms = Vec::with_capacity(n);
            for (i, &loss) in task_losses.iter().enumerate() {
                store.zero_grad();
                let weighted = tape.scale(loss, weights[i]);
                tape.backward(weighted, store)?;
                norms.push(grad_l2_norm(store, &anchor)?);
                match &mut total {
                    None => total = Some(store.grads()),
                    Some(acc) => {
                        for (a, (_, p)) in acc.iter_mut().zip(store.iter()) {
                            a.add_assign(&p.grad);
                        }
                    }
                }
            }
            if let Some(total) = total {
                for (p, g) in store.iter_mut().zip(total) {
                    p.grad = g;
                }
            }
            let snapshot = self.task_weights.balance(&losses, &norms)?;
            self.balance_calls += 1;
            let sum: f64 = self.task_weights.weights.iter().sum();
            debug_assert!((sum - n as f64).abs() < 1e-9);
            if self.cfg.trace {
                self.trace.extend(snapshot.trace_rows(self.step));
            }
            Some(snapshot)
        } else {
            let store = model.params_mut();
            store.zero_grad();
            let mut total: Option<Var> = None;
            for (i, &loss) in task_losses.iter().enumerate() {
                let term = tape.scale(loss, weights[i]);
                total = Some(match total {
                    Some(t) => tape.add(t, term)?,
                    None => term,
                });
            }
            let total = total.ok_or_else(|| Error::contract("model has no tasks"))?;
            tape.backward(total, store)?;
            None
        };

        self.optimizer.step(model.params_mut(), lr);
        self.step += 1;
        Ok(StepOutcome {
            losses,
            weighted_loss,
            balance,
        })
    }
}

fn task_loss_nodes(tape: &mut Tape, preds: &[Var], y: &Matrix) -> Result<Vec<Var>> {
    if preds.len() != y.cols() {
        return Err(Error::Shape {
            op: "targets",
            left: (y.rows(), preds.len()),
            right: y.shape(),
        });
    }
    preds
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let t = tape.input(Matrix::from_vec(y.rows(), 1, y.column(i))?);
            tape.mse(p, t)
        })
        .collect()
}

/// Anchor-layer gradient norm of each weighted task loss over `data`, in
/// eval mode (no dropout).
pub fn anchor_grad_norms<M: MultiTaskModel>(model: &M, data: &Dataset, weights: &[f64]) -> Result<Vec<f64>> {
    let anchor = model.anchor();
    let mut store: ParamStore = model.params().clone();
    let mut tape = Tape::new();
    let mut rng = Rng::new(0);
    let mut ctx = ForwardCtx {
        mode: Mode::Eval,
        rng: &mut rng,
    };
    let preds = model.forward(&mut tape, &data.features, &mut ctx)?;
    let losses = task_loss_nodes(&mut tape, &preds, &data.targets)?;
    losses
        .iter()
        .zip(weights)
        .map(|(&l, &w)| {
            store.zero_grad();
            let weighted = tape.scale(l, w);
            tape.backward(weighted, &mut store)?;
            grad_l2_norm(&store, &anchor)
        })
        .collect()
}

/// Predicts on normalized features, denormalizes, and scores each task
/// against the denormalized targets.
pub fn evaluate<M: MultiTaskModel>(model: &M, data: &Dataset, stats: &Normalization) -> Result<Vec<TaskMetrics>> {
    let (y, yhat) = denormalized_predictions(model, data, stats)?;
    per_task(&y, &yhat)
}

/// `(targets, predictions)`, both in original units.
pub fn denormalized_predictions<M: MultiTaskModel>(
    model: &M,
    data: &Dataset,
    stats: &Normalization,
) -> Result<(Matrix, Matrix)> {
    let yhat = stats.denormalize_targets(&model.predict(&data.features)?)?;
    let y = stats.denormalize_targets(&data.targets)?;
    Ok((y, yhat))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean per-task training loss over the epoch's batches.
    pub train_loss: Vec<f64>,
    pub weighted_loss: f64,
    /// Task weights at the end of the epoch.
    pub weights: Vec<f64>,
    /// Mean anchor gradient norm per task; absent without balancing.
    pub grad_norms: Option<Vec<f64>>,
    pub val: Vec<TaskMetrics>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub task_names: Vec<String>,
    pub epochs: Vec<EpochRecord>,
    /// Epoch with the lowest mean validation RMSE.
    pub best_epoch: usize,
    /// Test metrics of the best-validation parameters.
    pub test: Vec<TaskMetrics>,
    pub balance_steps: usize,
    pub train_seconds: f64,
}

/// Fitting output: the report, the best-validation model, and any trace rows.
#[derive(Debug, Clone)]
pub struct Fitted<M> {
    pub report: TrainReport,
    pub best: M,
    pub trace: Vec<TraceRow>,
}

struct Stopwatch {
    #[cfg(not(target_arch = "wasm32"))]
    start: std::time::Instant,
}

impl Stopwatch {
    fn start() -> Self {
        Stopwatch {
            #[cfg(not(target_arch = "wasm32"))]
            start: std::time::Instant::now(),
        }
    }

    /// Always 0 on wasm32, which has no monotonic clock in std.
    fn seconds(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        {
            self.start.elapsed().as_secs_f64()
        }
        #[cfg(target_arch = "wasm32")]
        {
            0.0
        }
    }
}

/// Runs `cfg.epochs` epochs over the (normalized) training split.
pub fn fit<M: MultiTaskModel + Clone>(model: &mut M, split: &SplitDataset, cfg: &TrainConfig) -> Result<Fitted<M>> {
    let mut trainer = Trainer::new(model, cfg.clone())?;
    fit_with(&mut trainer, model, split, |_, _| {})
}

/// [`fit`] with a callback after every epoch.
pub fn fit_with<M: MultiTaskModel + Clone>(
    trainer: &mut Trainer,
    model: &mut M,
    split: &SplitDataset,
    mut on_epoch: impl FnMut(&EpochRecord, &M),
) -> Result<Fitted<M>> {
    let cfg = trainer.config().clone();
    let n = model.num_tasks();
    if split.num_tasks() != n {
        return Err(Error::contract(format!(
            "dataset has {} targets, model has {n} tasks",
            split.num_tasks()
        )));
    }
    let train = &split.train;
    if train.is_empty() {
        return Err(Error::contract("empty training split"));
    }
    let total_clock = Stopwatch::start();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = Rng::new(derive_seed(cfg.seed, 0x5AFF));
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, M)> = None;

    for epoch in 0..cfg.epochs {
        let clock = Stopwatch::start();
        let lr = cfg.lr_at_epoch(epoch);
        if cfg.shuffle {
            shuffle_rng.shuffle(&mut order);
        }
        let mut loss_sum = vec![0.0; n];
        let mut weighted_sum = 0.0;
        let mut norm_sum = vec![0.0; n];
        let mut batches = 0usize;
        let mut balanced = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = if cfg.shuffle {
                (train.features.select_rows(chunk), train.targets.select_rows(chunk))
            } else {
                let (a, b) = (chunk[0], chunk[chunk.len() - 1] + 1);
                (train.features.slice_rows(a, b), train.targets.slice_rows(a, b))
            };
            let out = trainer.train_step(model, &x, &y, lr)?;
            for (s, l) in loss_sum.iter_mut().zip(&out.losses) {
                *s += l;
            }
            weighted_sum += out.weighted_loss;
            if let Some(snap) = &out.balance {
                for (s, g) in norm_sum.iter_mut().zip(&snap.grad_norms) {
                    *s += g;
                }
                balanced += 1;
            }
            batches += 1;
        }
        let val = evaluate(model, &split.val, &split.normalization)?;
        let mean_rmse = val.iter().map(|m| m.rmse).sum::<f64>() / n as f64;
        if best.as_ref().is_none_or(|(b, _, _)| mean_rmse < *b) {
            best = Some((mean_rmse, epoch, model.clone()));
        }
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum.iter().map(|s| s / batches as f64).collect(),
            weighted_loss: weighted_sum / batches as f64,
            weights: trainer.weights().to_vec(),
            grad_norms: (balanced > 0).then(|| norm_sum.iter().map(|s| s / balanced as f64).collect()),
            val,
            seconds: clock.seconds(),
        };
        on_epoch(&record, model);
        epochs.push(record);
    }

    let (best_epoch, best_model) = match best {
        Some((_, e, m)) => (e, m),
        None => (0, model.clone()),
    };
    let test = evaluate(&best_model, &split.test, &split.normalization)?;
    Ok(Fitted {
        report: TrainReport {
            task_names: train.target_names.clone(),
            epochs,
            best_epoch,
            test,
            balance_steps: trainer.balance_calls(),
            train_seconds: total_clock.seconds(),
        },
        best: best_model,
        trace: trainer.take_trace(),
    })
}

#[derive(Serialize)]
struct EpochCsvRow<'a> {
    epoch: usize,
    task: &'a str,
    loss: f64,
    weight: f64,
    grad_norm: Option<f64>,
    val_rmse: f64,
    val_mae: f64,
    val_r2: f64,
}

impl TrainReport {
    /// `epoch,task,loss,weight,grad_norm,val_rmse,val_mae,val_r2`, one row per
    /// task per epoch. Contains no timings, so it is reproducible.
    pub fn write_epochs_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for e in &self.epochs {
            for (i, name) in self.task_names.iter().enumerate() {
                w.serialize(EpochCsvRow {
                    epoch: e.epoch,
                    task: name,
                    loss: e.train_loss[i],
                    weight: e.weights[i],
                    grad_norm: e.grad_norms.as_ref().map(|g| g[i]),
                    val_rmse: e.val[i].rmse,
                    val_mae: e.val[i].mae,
                    val_r2: e.val[i].r2,
                })?;
            }
        }
        w.flush().map_err(|e| Error::io("epochs csv", e))?;
        Ok(())
    }
}

/// Everything needed to train one configuration from scratch.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub kind: ModelKind,
    pub model: MmoeConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub test: Vec<TaskMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiSeedReport {
    pub task_names: Vec<String>,
    pub runs: Vec<SeedResult>,
    pub mean: Vec<TaskMetrics>,
    /// Sample standard deviation; zero for a single seed.
    pub std: Vec<TaskMetrics>,
}

impl RunSpec {
    /// Builds a fresh model seeded with `seed` and fits it.
    pub fn run(&self, split: &SplitDataset, seed: u64) -> Result<Fitted<Model>> {
        let mut model = Model::build(self.kind, self.model.clone(), seed)?;
        let cfg = TrainConfig {
            seed,
            ..self.train.clone()
        };
        fit(&mut model, split, &cfg)
    }
}

/// Fits and evaluates once per seed `base + k`, `k < n_seeds`, where `base`
/// is `spec.train.seed`.
pub fn multi_seed_run(spec: &RunSpec, split: &SplitDataset, n_seeds: usize) -> Result<MultiSeedReport> {
    if n_seeds == 0 {
        return Err(Error::contract("n_seeds must be >= 1"));
    }
    let mut runs = Vec::with_capacity(n_seeds);
    let mut failed = Vec::new();
    for k in 0..n_seeds as u64 {
        let seed = spec.train.seed + k;
        match spec.run(split, seed) {
            Ok(f) => runs.push(SeedResult {
                seed,
                test: f.report.test,
            }),
            Err(e) => failed.push((seed, e.to_string())),
        }
    }
    if !failed.is_empty() {
        return Err(Error::contract(format!(
            "seed runs failed: {}",
            failed
                .iter()
                .map(|(s, e)| format!("seed {s}: {e}"))
                .collect::<Vec<_>>()
                .join("; ")
        )));
    }
    let (mean, std) = aggregate(&runs);
    Ok(MultiSeedReport {
        task_names: split.train.target_names.clone(),
        runs,
        mean,
        std,
    })
}

/// Per-task mean and sample standard deviation of each metric.
pub fn aggregate(runs: &[SeedResult]) -> (Vec<TaskMetrics>, Vec<TaskMetrics>) {
    let n_tasks = runs.first().map_or(0, |r| r.test.len());
    let stat = |task: usize, f: fn(&TaskMetrics) -> f64| -> (f64, f64) {
        let vals: Vec<f64> = runs.iter().map(|r| f(&r.test[task])).collect();
        mean_std(&vals)
    };
    let mut means = Vec::with_capacity(n_tasks);
    let mut stds = Vec::with_capacity(n_tasks);
    for t in 0..n_tasks {
        let (rm, rs) = stat(t, |m| m.rmse);
        let (mm, ms) = stat(t, |m| m.mae);
        let (r2m, r2s) = stat(t, |m| m.r2);
        means.push(TaskMetrics { rmse: rm, mae: mm, r2: r2m });
        stds.push(TaskMetrics { rmse: rs, mae: ms, r2: r2s });
    }
    (means, stds)
}

pub fn mean_std(vals: &[f64]) -> (f64, f64) {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    if vals.len() < 2 {
        return (mean, 0.0);
    }
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
