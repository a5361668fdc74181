//! Browser demo exports. Three operations back `www/index.html`:
//! activation curves, a gradient-norm target explorer, and a live
//! task-weight trajectory on synthetic data.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use bmoe::activation::{mish, mish_derivative, relu};
use bmoe::data::{self, SplitDataset, SynthConfig};
use bmoe::gradnorm;
use bmoe::trainer::Trainer;
use bmoe::{MmoeConfig, Model, ModelKind, TrainConfig};
use wasm_bindgen::prelude::*;

/// Errors stay plain strings until they cross into JS, so everything below
/// also runs natively.
type Res<T> = Result<T, String>;

fn msg(e: bmoe::Error) -> String {
    e.to_string()
}

fn js(e: String) -> JsError {
    JsError::new(&e)
}

/// `n` evenly spaced samples on `[lo, hi]` of the named activation
/// (`mish`, `mish_prime`, `relu`).
pub fn curve(name: &str, lo: f64, hi: f64, n: usize) -> Res<Vec<f64>> {
    let f: fn(f64) -> f64 = match name {
        "mish" => mish,
        "mish_prime" => mish_derivative,
        "relu" => relu,
        other => return Err(format!("unknown activation {other:?}")),
    };
    if n < 2 || !(hi > lo) {
        return Err("need n >= 2 and hi > lo".into());
    }
    let step = (hi - lo) / (n - 1) as f64;
    Ok((0..n).map(|i| f(lo + step * i as f64)).collect())
}

#[wasm_bindgen]
pub fn activation_curve(name: &str, lo: f64, hi: f64, n: usize) -> Result<Vec<f64>, JsError> {
    curve(name, lo, hi, n).map_err(js)
}

/// One balancing step worked out from raw inputs.
#[wasm_bindgen]
pub struct BalanceView {
    ritr: Vec<f64>,
    targets: Vec<f64>,
    gradients: Vec<f64>,
    next_weights: Vec<f64>,
    loss: f64,
}

#[wasm_bindgen]
impl BalanceView {
    pub fn ritr(&self) -> Vec<f64> {
        self.ritr.clone()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.targets.clone()
    }

    pub fn gradients(&self) -> Vec<f64> {
        self.gradients.clone()
    }

    #[wasm_bindgen(js_name = nextWeights)]
    pub fn next_weights(&self) -> Vec<f64> {
        self.next_weights.clone()
    }

    pub fn loss(&self) -> f64 {
        self.loss
    }
}

/// Targets, weight gradients and updated weights for given anchor norms,
/// loss ratios and current weights.
pub fn balance(
    grad_norms: &[f64],
    loss_ratios: &[f64],
    weights: Vec<f64>,
    alpha: f64,
    lambda: f64,
) -> Res<BalanceView> {
    let ritr = gradnorm::ritr(loss_ratios).map_err(msg)?;
    let targets = gradnorm::target_norms(grad_norms, &ritr, alpha).map_err(msg)?;
    let loss = gradnorm::gradnorm_loss(grad_norms, &ritr, alpha).map_err(msg)?;
    let gradients = gradnorm::weight_gradients(grad_norms, &targets, &weights).map_err(msg)?;
    let mut tw = gradnorm::TaskWeights::new(weights, alpha, lambda).map_err(msg)?;
    tw.update_and_renormalize(&gradients).map_err(msg)?;
    Ok(BalanceView {
        ritr,
        targets,
        gradients,
        next_weights: tw.weights,
        loss,
    })
}

#[wasm_bindgen]
pub fn explore_balance(
    grad_norms: Vec<f64>,
    loss_ratios: Vec<f64>,
    weights: Vec<f64>,
    alpha: f64,
    lambda: f64,
) -> Result<BalanceView, JsError> {
    balance(&grad_norms, &loss_ratios, weights, alpha, lambda).map_err(js)
}

/// A small two-task model training on synthetic data, one batch at a time.
#[wasm_bindgen]
pub struct WeightSession {
    model: Model,
    trainer: Trainer,
    split: SplitDataset,
    cursor: usize,
    batch: usize,
}

impl WeightSession {
    pub fn open(relatedness: f64, alpha: f64, first_weight: f64, seed: u64) -> Res<WeightSession> {
        if !(first_weight > 0.0 && first_weight < 2.0) {
            return Err("first weight must lie in (0, 2)".into());
        }
        let raw = data::gen_synthetic(&SynthConfig {
            num_samples: 400,
            relatedness,
            seed,
            ..SynthConfig::default()
        })
        .map_err(msg)?;
        let split = data::split_622(&raw).map_err(msg)?;
        let config = MmoeConfig {
            embed_dim: 8,
            num_experts: 3,
            expert_hidden: vec![16],
            tower_hidden: vec![8],
            ..MmoeConfig::default()
        };
        let model = Model::build(ModelKind::Mmoe, config, seed).map_err(msg)?;
        let train = TrainConfig {
            alpha,
            seed,
            initial_task_weights: Some(vec![first_weight, 2.0 - first_weight]),
            ..TrainConfig::default()
        };
        let trainer = Trainer::new(&model, train).map_err(msg)?;
        Ok(WeightSession {
            model,
            trainer,
            split,
            cursor: 0,
            batch: 32,
        })
    }

    /// Runs `steps` batches, cycling through the training rows. Returns the
    /// weights after each step, flattened as `[w1, w2, w1, w2, ...]`.
    pub fn advance(&mut self, steps: usize) -> Res<Vec<f64>> {
        let rows = self.split.train.len();
        let mut out = Vec::with_capacity(steps * 2);
        for _ in 0..steps {
            if self.cursor + self.batch > rows {
                self.cursor = 0;
            }
            let (a, b) = (self.cursor, self.cursor + self.batch);
            let x = self.split.train.features.slice_rows(a, b);
            let y = self.split.train.targets.slice_rows(a, b);
            self.trainer.train_step(&mut self.model, &x, &y, 0.01).map_err(msg)?;
            self.cursor = b;
            out.extend_from_slice(self.trainer.weights());
        }
        Ok(out)
    }
}

#[wasm_bindgen]
impl WeightSession {
    #[wasm_bindgen(constructor)]
    pub fn new(relatedness: f64, alpha: f64, first_weight: f64, seed: u64) -> Result<WeightSession, JsError> {
        WeightSession::open(relatedness, alpha, first_weight, seed).map_err(js)
    }

    pub fn step(&mut self, steps: usize) -> Result<Vec<f64>, JsError> {
        self.advance(steps).map_err(js)
    }

    pub fn weights(&self) -> Vec<f64> {
        self.trainer.weights().to_vec()
    }

    #[wasm_bindgen(js_name = stepsTaken)]
    pub fn steps_taken(&self) -> usize {
        self.trainer.steps()
    }
}
