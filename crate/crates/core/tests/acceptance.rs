//! Acceptance suite. Prints one line per criterion and exits non-zero if any
//! criterion fails. Criteria 10-12 need the public SRU data; point
//! `BMOE_SRU_CSV` at a CSV with columns x1..x5, y1 (H2S), y2 (SO2) to run them.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use bmoe::autodiff::{ParamStore, Tape, Var};
use bmoe::data::{self, Dataset, SplitDataset, SynthConfig, SRU_FEATURES, SRU_TARGETS};
use bmoe::gradnorm::{ritr, WEIGHT_FLOOR};
use bmoe::layers::{ForwardCtx, Mode};
use bmoe::metrics;
use bmoe::rng::Rng;
use bmoe::trainer::{self, multi_seed_run, RunSpec, Trainer};
use bmoe::{Activation, Matrix, MmoeConfig, Model, ModelKind, MultiTaskModel, TrainConfig};

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = fn() -> Verdict;

fn pass(detail: impl Into<String>) -> Verdict {
    Verdict::Pass(detail.into())
}

fn judge(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn within(limit: Duration, start: Instant, v: Verdict) -> Verdict {
    let took = start.elapsed();
    match v {
        Verdict::Pass(d) if took > limit => Verdict::Fail(format!("{d}; took {took:.1?}, limit {limit:?}")),
        Verdict::Pass(d) => Verdict::Pass(format!("{d}; {took:.1?}")),
        other => other,
    }
}

fn main() {
    let checks: [(u32, &str, Check); 12] = [
        (1, "gradient correctness", c1_gradients),
        (2, "gate rows on the simplex", c2_gate_simplex),
        (3, "weights renormalized every step", c3_renormalization),
        (4, "RITR has unit mean", c4_ritr_mean),
        (5, "alpha = 0 equalizes anchor norms", c5_alpha_zero),
        (6, "identical tasks keep equal weights", c6_symmetry),
        (7, "metrics match loop oracle", c7_metrics),
        (8, "BMoE beats hard sharing on conflicting tasks", c8_negative_transfer),
        (9, "same seed, same epoch CSV", c9_determinism),
        (10, "SRU test R2", c10_sru_r2),
        (11, "SRU weight trajectories agree", c11_sru_weights),
        (12, "SRU alpha sweep shape", c12_sru_alpha),
    ];
    let only: Option<u32> = std::env::var("BMOE_ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (id, name, check) in checks {
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let (tag, detail) = match check() {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Verdict::Skip(d) => ("SKIP", d),
        };
        println!("{tag} {id:>2} {name}: {detail}");
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn synth_split(cfg: SynthConfig) -> SplitDataset {
    data::split_622(&data::gen_synthetic(&cfg).expect("synthetic data")).expect("split")
}

fn random_widths(rng: &mut Rng, min_layers: usize, max_layers: usize) -> Vec<usize> {
    let layers = min_layers + rng.below(max_layers - min_layers + 1);
    (0..layers).map(|_| 1 + rng.below(8)).collect()
}

fn random_config(rng: &mut Rng) -> MmoeConfig {
    MmoeConfig {
        input_dim: 1 + rng.below(5),
        embed_dim: 1 + rng.below(8),
        num_experts: 1 + rng.below(3),
        expert_hidden: random_widths(rng, 1, 2),
        num_tasks: 1 + rng.below(3),
        tower_hidden: random_widths(rng, 0, 2),
        dropout_rate: 0.0,
        activation: Activation::Mish,
    }
}

fn weighted_loss(tape: &mut Tape, model: &Model, x: &Matrix, y: &Matrix, w: &[f64]) -> Var {
    let mut rng = Rng::new(0);
    let mut ctx = ForwardCtx {
        mode: Mode::Eval,
        rng: &mut rng,
    };
    let preds = model.forward(tape, x, &mut ctx).expect("forward");
    let mut total: Option<Var> = None;
    for (i, &p) in preds.iter().enumerate() {
        let t = tape.input(Matrix::from_vec(y.rows(), 1, y.column(i)).unwrap());
        let l = tape.mse(p, t).unwrap();
        let term = tape.scale(l, w[i]);
        total = Some(match total {
            Some(acc) => tape.add(acc, term).unwrap(),
            None => term,
        });
    }
    total.unwrap()
}

/// Relative error with a floor on the denominator so gradients that are
/// zero up to rounding compare on an absolute scale.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-4)
}

fn c1_gradients() -> Verdict {
    let start = Instant::now();
    let mut rng = Rng::new(2024);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for inst in 0..20 {
        let cfg = random_config(&mut rng);
        let kind = if inst % 5 == 4 { ModelKind::OneGateMoe } else { ModelKind::Mmoe };
        let mut model = Model::build(kind, cfg.clone(), 100 + inst).unwrap();
        // biases start at zero; perturb everything so no parameter sits at a
        // special point
        for p in model.params_mut().iter_mut() {
            p.value = p.value.map(|v| v + 0.3 * rng.normal());
        }
        let m = 1 + rng.below(6);
        let x = Matrix::from_fn(m, cfg.input_dim, |_, _| rng.normal());
        let y = Matrix::from_fn(m, cfg.num_tasks, |_, _| rng.normal());
        let w: Vec<f64> = (0..cfg.num_tasks).map(|_| rng.uniform_range(0.2, 2.0)).collect();

        let mut tape = Tape::new();
        let loss = weighted_loss(&mut tape, &model, &x, &y, &w);
        model.params_mut().zero_grad();
        tape.backward(loss, model.params_mut()).unwrap();
        let analytic: ParamStore = model.params().clone();

        let eval = |model: &Model| {
            let mut tape = Tape::new();
            let l = weighted_loss(&mut tape, model, &x, &y, &w);
            tape.value(l).item()
        };
        for (id, p) in analytic.iter() {
            for k in 0..p.value.len() {
                let orig = p.value.as_slice()[k];
                model.params_mut().get_mut(id).value.as_mut_slice()[k] = orig + h;
                let up = eval(&model);
                model.params_mut().get_mut(id).value.as_mut_slice()[k] = orig - h;
                let down = eval(&model);
                model.params_mut().get_mut(id).value.as_mut_slice()[k] = orig;
                let numeric = (up - down) / (2.0 * h);
                let e = rel_err(p.grad.as_slice()[k], numeric);
                if e > worst {
                    worst = e;
                }
                checked += 1;
            }
        }
    }
    within(
        Duration::from_secs(60),
        start,
        judge(worst <= 1e-5, format!("{checked} partials over 20 models, max rel err {worst:.2e} (limit 1e-5)")),
    )
}

fn c2_gate_simplex() -> Verdict {
    let mut rng = Rng::new(7);
    let mut worst: f64 = 0.0;
    for trial in 0..1000u64 {
        let cfg = random_config(&mut rng);
        let kind = if trial % 2 == 0 { ModelKind::Mmoe } else { ModelKind::OneGateMoe };
        let mut model = Model::build(kind, cfg.clone(), trial).unwrap();
        let spread = rng.uniform_range(0.1, 20.0);
        for p in model.params_mut().iter_mut() {
            p.value = p.value.map(|v| v + spread * rng.normal());
        }
        let m = 1 + rng.below(8);
        let x = Matrix::from_fn(m, cfg.input_dim, |_, _| spread * rng.normal());
        let task = rng.below(cfg.num_tasks);
        let mmoe = model.as_mmoe().unwrap();
        let g = mmoe.gate_values(&mmoe.embed_values(&x).unwrap(), task).unwrap();
        for r in 0..g.rows() {
            let row = g.row(r);
            if row.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Verdict::Fail(format!("trial {trial}: gate entry outside [0, 1]: {row:?}"));
            }
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    }
    judge(worst <= 1e-9, format!("1000 triples, max |row sum - 1| = {worst:.1e}"))
}

fn c3_renormalization() -> Verdict {
    let split = synth_split(SynthConfig { num_samples: 600, ..SynthConfig::default() });
    let mut details = Vec::new();
    // the second setting pushes one weight into the floor
    for (alpha, lambda, init) in [(0.3, 0.01, vec![1.0, 1.0]), (3.0, 2.0, vec![1.9, 0.1])] {
        let mut model = Model::build(ModelKind::Mmoe, MmoeConfig::default(), 5).unwrap();
        let cfg = TrainConfig {
            alpha,
            lambda: Some(lambda),
            initial_task_weights: Some(init),
            seed: 5,
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(&model, cfg).unwrap();
        let (mut max_dev, mut min_w): (f64, f64) = (0.0, f64::INFINITY);
        for step in 0..50 {
            let a = (step * 32) % (split.train.len() - 32);
            let x = split.train.features.slice_rows(a, a + 32);
            let y = split.train.targets.slice_rows(a, a + 32);
            if let Err(e) = trainer.train_step(&mut model, &x, &y, 0.01) {
                return Verdict::Fail(format!("step {step}: {e}"));
            }
            let w = trainer.weights();
            max_dev = max_dev.max((w.iter().sum::<f64>() - 2.0).abs());
            min_w = min_w.min(w.iter().cloned().fold(f64::INFINITY, f64::min));
        }
        if max_dev > 1e-9 || min_w < WEIGHT_FLOOR {
            return Verdict::Fail(format!("alpha {alpha}: |sum - N| up to {max_dev:.1e}, min weight {min_w:.1e}"));
        }
        details.push(format!("alpha {alpha}: |sum - N| <= {max_dev:.1e}, min w {min_w:.1e}"));
    }
    pass(format!("50 steps each; {}", details.join("; ")))
}

fn c4_ritr_mean() -> Verdict {
    let mut rng = Rng::new(99);
    let mut worst: f64 = 0.0;
    for _ in 0..2000 {
        let n = 1 + rng.below(10);
        let ratios: Vec<f64> = (0..n).map(|_| rng.uniform_range(-6.0, 6.0).exp()).collect();
        let r = ritr(&ratios).unwrap();
        worst = worst.max((r.iter().sum::<f64>() / n as f64 - 1.0).abs());
    }
    judge(worst <= 1e-12, format!("2000 loss-ratio vectors, max |mean - 1| = {worst:.1e}"))
}

fn c5_alpha_zero() -> Verdict {
    let split = synth_split(SynthConfig { relatedness: 0.5, ..SynthConfig::default() });
    let mut ratios = Vec::new();
    for balanced in [true, false] {
        let mut model = Model::build(ModelKind::Mmoe, MmoeConfig::default(), 1).unwrap();
        let cfg = TrainConfig {
            epochs: 100,
            alpha: 0.0,
            gradnorm_enabled: balanced,
            seed: 1,
            ..TrainConfig::default()
        };
        let fitted = match trainer::fit(&mut model, &split, &cfg) {
            Ok(f) => f,
            Err(e) => return Verdict::Fail(e.to_string()),
        };
        let w = &fitted.report.epochs.last().unwrap().weights;
        let g = trainer::anchor_grad_norms(&model, &split.train, w).unwrap();
        let hi = g.iter().cloned().fold(0.0, f64::max);
        let lo = g.iter().cloned().fold(f64::INFINITY, f64::min);
        ratios.push(hi / lo);
    }
    judge(
        ratios[0] <= 2.0,
        format!("max/min G = {:.3} with balancing (limit 2); equal weights: {:.3}", ratios[0], ratios[1]),
    )
}

/// Copies every `{from}.*` parameter onto the matching `{to}.*` parameter.
fn tie(store: &mut ParamStore, from: &str, to: &str) {
    let copies: Vec<(String, Matrix)> = store
        .iter()
        .filter_map(|(_, p)| p.name.strip_prefix(from).map(|rest| (format!("{to}{rest}"), p.value.clone())))
        .collect();
    for (name, value) in copies {
        store.by_name_mut(&name).expect("matching parameter").value = value;
    }
}

fn c6_symmetry() -> Verdict {
    let raw = data::gen_synthetic(&SynthConfig { num_tasks: 1, ..SynthConfig::default() }).unwrap();
    let both = Matrix::hstack(&[&raw.targets, &raw.targets]).unwrap();
    let dup = Dataset::new(raw.features, both, raw.feature_names, vec!["a".into(), "b".into()]).unwrap();
    let split = data::split_622(&dup).unwrap();

    let run = |tied: bool| -> Result<f64, String> {
        let cfg = MmoeConfig {
            dropout_rate: if tied { 0.0 } else { 0.1 },
            ..MmoeConfig::default()
        };
        let mut model = Model::build(ModelKind::Mmoe, cfg, 3).unwrap();
        if tied {
            tie(model.params_mut(), "gate0.", "gate1.");
            tie(model.params_mut(), "tower0.", "tower1.");
        }
        let mut trainer = Trainer::new(&model, TrainConfig { seed: 3, ..TrainConfig::default() }).unwrap();
        let mut dev: f64 = 0.0;
        for step in 0..50 {
            let a = (step * 32) % (split.train.len() - 32);
            let x = split.train.features.slice_rows(a, a + 32);
            let y = split.train.targets.slice_rows(a, a + 32);
            trainer.train_step(&mut model, &x, &y, 0.01).map_err(|e| e.to_string())?;
            dev = trainer.weights().iter().fold(dev, |d, w| d.max((w - 1.0).abs()));
        }
        Ok(dev)
    };
    match (run(true), run(false)) {
        (Ok(tied), Ok(untied)) => judge(
            tied <= 0.05,
            format!("max |w - 1| over 50 steps = {tied:.1e} with tied heads (limit 0.05); independent heads: {untied:.3}"),
        ),
        (Err(e), _) | (_, Err(e)) => Verdict::Fail(e),
    }
}

fn c7_metrics() -> Verdict {
    let mut rng = Rng::new(31);
    let mut worst: f64 = 0.0;
    for trial in 0..1000 {
        let m = 2 + rng.below(50);
        let scale = rng.uniform_range(-3.0, 3.0).exp();
        let y: Vec<f64> = (0..m).map(|_| scale * rng.normal()).collect();
        let yhat: Vec<f64> = y.iter().map(|v| v + scale * 0.5 * rng.normal()).collect();
        let got = metrics::task_metrics(&y, &yhat).unwrap();

        let mut se = 0.0;
        let mut ae = 0.0;
        let mut mean = 0.0;
        for i in 0..m {
            se += (y[i] - yhat[i]) * (y[i] - yhat[i]);
            ae += (y[i] - yhat[i]).abs();
            mean += y[i];
        }
        mean /= m as f64;
        let mut ss = 0.0;
        for v in &y {
            ss += (v - mean) * (v - mean);
        }
        let (rmse, mae, r2) = ((se / m as f64).sqrt(), ae / m as f64, 1.0 - se / ss);
        if got.rmse < got.mae {
            return Verdict::Fail(format!("trial {trial}: rmse {} < mae {}", got.rmse, got.mae));
        }
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
        worst = worst.max(rel(got.rmse, rmse)).max(rel(got.mae, mae)).max(rel(got.r2, r2));
    }
    judge(worst <= 1e-12, format!("1000 pairs, max deviation {worst:.1e}; rmse >= mae throughout"))
}

fn c8_negative_transfer() -> Verdict {
    let start = Instant::now();
    let split = synth_split(SynthConfig {
        num_samples: 2000,
        relatedness: -0.6,
        ..SynthConfig::default()
    });
    let model = MmoeConfig {
        expert_hidden: vec![8],
        ..MmoeConfig::default()
    };
    let bmoe = RunSpec {
        kind: ModelKind::Mmoe,
        model: model.clone(),
        train: TrainConfig::default(),
    };
    let hard = RunSpec {
        kind: ModelKind::HardShared,
        model,
        train: TrainConfig {
            gradnorm_enabled: false,
            ..TrainConfig::default()
        },
    };
    let (b, h) = match (multi_seed_run(&bmoe, &split, 3), multi_seed_run(&hard, &split, 3)) {
        (Ok(b), Ok(h)) => (b, h),
        (Err(e), _) | (_, Err(e)) => return Verdict::Fail(e.to_string()),
    };
    let weaker = if h.mean[0].r2 <= h.mean[1].r2 { 0 } else { 1 };
    let gap = b.mean[weaker].r2 - h.mean[weaker].r2;
    within(
        Duration::from_secs(300),
        start,
        judge(
            gap >= 0.02,
            format!(
                "weaker task y{}: BMoE R2 {:.4} vs hard-shared {:.4}, gap {gap:.4} (need >= 0.02); other task {:.4} vs {:.4}",
                weaker + 1,
                b.mean[weaker].r2,
                h.mean[weaker].r2,
                b.mean[1 - weaker].r2,
                h.mean[1 - weaker].r2
            ),
        ),
    )
}

fn c9_determinism() -> Verdict {
    let split = synth_split(SynthConfig { num_samples: 500, ..SynthConfig::default() });
    let run = || {
        let mut model = Model::build(ModelKind::Mmoe, MmoeConfig::default(), 9).unwrap();
        let cfg = TrainConfig {
            epochs: 20,
            shuffle: true,
            seed: 9,
            ..TrainConfig::default()
        };
        let fitted = trainer::fit(&mut model, &split, &cfg).unwrap();
        let mut csv = Vec::new();
        fitted.report.write_epochs_csv(&mut csv).unwrap();
        csv
    };
    let (a, b) = (run(), run());
    judge(a == b, format!("{} bytes, {} rows, identical: {}", a.len(), a.iter().filter(|&&c| c == b'\n').count(), a == b))
}

fn sru() -> Option<Result<SplitDataset, String>> {
    let path = PathBuf::from(std::env::var_os("BMOE_SRU_CSV")?);
    let names = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    Some(
        data::load_csv(&path, &names(&SRU_FEATURES), &names(&SRU_TARGETS))
            .and_then(|d| data::split_622(&d))
            .map_err(|e| e.to_string()),
    )
}

const NO_SRU: &str = "BMOE_SRU_CSV not set; SRU data unavailable";

macro_rules! with_sru {
    () => {
        match sru() {
            None => return Verdict::Skip(NO_SRU.into()),
            Some(Err(e)) => return Verdict::Fail(e),
            Some(Ok(s)) => s,
        }
    };
}

fn c10_sru_r2() -> Verdict {
    let split = with_sru!();
    let spec = |kind, gradnorm_enabled| RunSpec {
        kind,
        model: MmoeConfig::default(),
        train: TrainConfig {
            gradnorm_enabled,
            ..TrainConfig::default()
        },
    };
    let (b, h) = match (
        multi_seed_run(&spec(ModelKind::Mmoe, true), &split, 10),
        multi_seed_run(&spec(ModelKind::HardShared, false), &split, 10),
    ) {
        (Ok(b), Ok(h)) => (b, h),
        (Err(e), _) | (_, Err(e)) => return Verdict::Fail(e.to_string()),
    };
    let ballpark = b.mean.iter().all(|m| m.r2 >= 0.80);
    let ordering = b.mean.iter().zip(&h.mean).all(|(x, y)| x.r2 >= y.r2);
    judge(
        ballpark || ordering,
        format!(
            "BMoE R2 H2S {:.4}±{:.4}, SO2 {:.4}±{:.4}; hard-shared {:.4}, {:.4}; ballpark {ballpark}, ordering {ordering}",
            b.mean[0].r2, b.std[0].r2, b.mean[1].r2, b.std[1].r2, h.mean[0].r2, h.mean[1].r2
        ),
    )
}

fn c11_sru_weights() -> Verdict {
    let split = with_sru!();
    let mut finals = Vec::new();
    for init in [[1.5, 0.5], [1.3, 0.7], [1.0, 1.0], [0.7, 1.3], [0.5, 1.5]] {
        let mut model = Model::build(ModelKind::Mmoe, MmoeConfig::default(), 0).unwrap();
        let cfg = TrainConfig {
            initial_task_weights: Some(init.to_vec()),
            ..TrainConfig::default()
        };
        match trainer::fit(&mut model, &split, &cfg) {
            Ok(f) => finals.push(f.report.epochs.last().unwrap().weights.clone()),
            Err(e) => return Verdict::Fail(e.to_string()),
        }
    }
    let ordered = finals.iter().all(|w| w[1] > w[0]);
    let spread = (0..2)
        .map(|t| {
            let v: Vec<f64> = finals.iter().map(|w| w[t]).collect();
            v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min)
        })
        .fold(0.0, f64::max);
    judge(ordered && spread <= 0.3, format!("final weights {finals:.3?}; SO2 > H2S in all: {ordered}; spread {spread:.3}"))
}

fn c12_sru_alpha() -> Verdict {
    let split = with_sru!();
    let mut r2 = Vec::new();
    for alpha in [0.0, 0.5, 1.0, 2.0, 3.0] {
        let spec = RunSpec {
            kind: ModelKind::Mmoe,
            model: MmoeConfig::default(),
            train: TrainConfig { alpha, ..TrainConfig::default() },
        };
        match multi_seed_run(&spec, &split, 3) {
            Ok(r) => r2.push(r.mean.iter().map(|m| m.r2).collect::<Vec<_>>()),
            Err(e) => return Verdict::Fail(e.to_string()),
        }
    }
    let shaped = (0..2).any(|t| (r2[0][t] + r2[1][t]) / 2.0 > r2[4][t]);
    judge(shaped, format!("mean R2 by alpha (0, 0.5, 1, 2, 3): {r2:.4?}"))
}
