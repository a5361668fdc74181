//! Dynamic task weighting by gradient-norm balancing.
//!
//! Each step, with `G_i` the L2 norm of the gradient of `w_i·L_i` w.r.t. the
//! shared anchor layer:
//!
//! ```text
//! L̃_i = L_i(t) / L_i(0)           loss ratio
//! r_i = L̃_i / mean(L̃)             relative inverse training rate
//! T_i = mean(G) · r_i^α            target norm, held constant
//! L_grad = Σ_i |G_i − T_i|
//! w ← w − λ ∂L_grad/∂w, floored at 1e-4, rescaled so Σ w = N
//! ```

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::sign;
use crate::error::{Error, Result};

/// Lower bound applied to every weight before renormalization.
pub const WEIGHT_FLOOR: f64 = 1e-4;

pub fn loss_ratios(current: &[f64], initial: &[f64]) -> Result<Vec<f64>> {
    check_len("loss_ratios", current.len(), initial.len())?;
    if let Some(i) = initial.iter().position(|&l| !(l > 0.0)) {
        return Err(Error::contract(format!(
            "initial loss of task {i} is {}, must be > 0",
            initial[i]
        )));
    }
    Ok(current.iter().zip(initial).map(|(c, i)| c / i).collect())
}

pub fn ritr(ratios: &[f64]) -> Result<Vec<f64>> {
    if ratios.is_empty() {
        return Err(Error::contract("ritr over zero tasks"));
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    if mean == 0.0 || !mean.is_finite() {
        return Err(Error::contract(format!("mean loss ratio is {mean}")));
    }
    Ok(ratios.iter().map(|r| r / mean).collect())
}

/// `mean(G) · r_i^α` for each task.
pub fn target_norms(grad_norms: &[f64], ritr: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_len("target_norms", grad_norms.len(), ritr.len())?;
    if grad_norms.is_empty() {
        return Err(Error::contract("target_norms over zero tasks"));
    }
    let mean = grad_norms.iter().sum::<f64>() / grad_norms.len() as f64;
    Ok(ritr.iter().map(|r| mean * r.powf(alpha)).collect())
}

pub fn gradnorm_loss(grad_norms: &[f64], ritr: &[f64], alpha: f64) -> Result<f64> {
    if let Some(g) = grad_norms.iter().find(|&&g| !(g >= 0.0)) {
        return Err(Error::contract(format!("gradient norm {g} must be >= 0")));
    }
    let targets = target_norms(grad_norms, ritr, alpha)?;
    Ok(grad_norms
        .iter()
        .zip(&targets)
        .map(|(g, t)| (g - t).abs())
        .sum())
}

/// ∂L_grad/∂w_i with targets constant. `G_i` is linear in `w_i`, so
/// ∂G_i/∂w_i = G_i / w_i and the derivative is `sign(G_i − T_i) · G_i / w_i`.
pub fn weight_gradients(grad_norms: &[f64], targets: &[f64], weights: &[f64]) -> Result<Vec<f64>> {
    check_len("weight_gradients", grad_norms.len(), targets.len())?;
    check_len("weight_gradients", grad_norms.len(), weights.len())?;
    grad_norms
        .iter()
        .zip(targets)
        .zip(weights)
        .enumerate()
        .map(|(i, ((&g, &t), &w))| {
            if !(w > 0.0) {
                return Err(Error::contract(format!("task weight {i} is {w}, must be > 0")));
            }
            Ok(sign(g - t) * g / w)
        })
        .collect()
}

fn check_len(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape {
            op,
            left: (a, 1),
            right: (b, 1),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskWeights {
    pub weights: Vec<f64>,
    /// `L_i(0)`, captured on the first balancing step.
    pub initial_losses: Option<Vec<f64>>,
    pub alpha: f64,
    pub lambda: f64,
}

/// Everything computed during one balancing step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceSnapshot {
    pub losses: Vec<f64>,
    pub loss_ratios: Vec<f64>,
    pub ritr: Vec<f64>,
    pub grad_norms: Vec<f64>,
    pub mean_grad_norm: f64,
    pub gradnorm_loss: f64,
    /// Weights in force during the step (before the update).
    pub weights: Vec<f64>,
}

impl TaskWeights {
    pub fn new(initial: Vec<f64>, alpha: f64, lambda: f64) -> Result<Self> {
        if initial.is_empty() {
            return Err(Error::contract("task weights for zero tasks"));
        }
        if let Some(w) = initial.iter().find(|&&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::contract(format!("initial task weight {w} must be > 0")));
        }
        if !(alpha >= 0.0) {
            return Err(Error::contract(format!("alpha {alpha} must be >= 0")));
        }
        if !(lambda > 0.0) {
            return Err(Error::contract(format!("lambda {lambda} must be > 0")));
        }
        Ok(TaskWeights {
            weights: initial,
            initial_losses: None,
            alpha,
            lambda,
        })
    }

    pub fn uniform(n: usize, alpha: f64, lambda: f64) -> Result<Self> {
        Self::new(vec![1.0; n], alpha, lambda)
    }

    pub fn num_tasks(&self) -> usize {
        self.weights.len()
    }

    /// Descent step `w − λ·grads`, floor, then rescale so the weights sum to N.
    pub fn update_and_renormalize(&mut self, grads: &[f64]) -> Result<()> {
        check_len("update_and_renormalize", self.weights.len(), grads.len())?;
        if let Some(g) = grads.iter().find(|g| !g.is_finite()) {
            return Err(Error::contract(format!("non-finite weight gradient {g}")));
        }
        for (w, g) in self.weights.iter_mut().zip(grads) {
            *w = (*w - self.lambda * g).max(WEIGHT_FLOOR);
        }
        self.renormalize();
        Ok(())
    }

    fn renormalize(&mut self) {
        let n = self.weights.len() as f64;
        let mut pinned = vec![false; self.weights.len()];
        // rescaling can push a weight under the floor; pin it and rescale the rest
        loop {
            let fixed = pinned.iter().filter(|&&p| p).count() as f64 * WEIGHT_FLOOR;
            let free: f64 = self
                .weights
                .iter()
                .zip(&pinned)
                .filter(|(_, &p)| !p)
                .map(|(w, _)| w)
                .sum();
            let scale = (n - fixed) / free;
            let mut changed = false;
            for (w, p) in self.weights.iter_mut().zip(pinned.iter_mut()) {
                if *p {
                    continue;
                }
                *w *= scale;
                if *w < WEIGHT_FLOOR {
                    *w = WEIGHT_FLOOR;
                    *p = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
    }

    /// One full balancing step from per-task losses `L_i(t)` and anchor
    /// gradient norms `G_i(t)` (of the weighted losses). Captures `L_i(0)`
    /// on the first call.
    pub fn balance(&mut self, losses: &[f64], grad_norms: &[f64]) -> Result<BalanceSnapshot> {
        check_len("balance", self.weights.len(), losses.len())?;
        let initial = self.initial_losses.get_or_insert_with(|| losses.to_vec()).clone();
        let ratios = loss_ratios(losses, &initial)?;
        let r = ritr(&ratios)?;
        let targets = target_norms(grad_norms, &r, self.alpha)?;
        let l_grad = gradnorm_loss(grad_norms, &r, self.alpha)?;
        let grads = weight_gradients(grad_norms, &targets, &self.weights)?;
        let before = self.weights.clone();
        self.update_and_renormalize(&grads)?;
        Ok(BalanceSnapshot {
            losses: losses.to_vec(),
            loss_ratios: ratios,
            ritr: r,
            mean_grad_norm: grad_norms.iter().sum::<f64>() / grad_norms.len() as f64,
            grad_norms: grad_norms.to_vec(),
            gradnorm_loss: l_grad,
            weights: before,
        })
    }
}

/// One row of a task-weight trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub task: usize,
    pub loss: f64,
    pub loss_ratio: f64,
    pub ritr: f64,
    pub grad_norm: f64,
    pub weight: f64,
}

impl BalanceSnapshot {
    pub fn trace_rows(&self, step: usize) -> Vec<TraceRow> {
        (0..self.losses.len())
            .map(|task| TraceRow {
                step,
                task,
                loss: self.losses[task],
                loss_ratio: self.loss_ratios[task],
                ritr: self.ritr[task],
                grad_norm: self.grad_norms[task],
                weight: self.weights[task],
            })
            .collect()
    }
}

pub fn write_trace_csv<W: Write>(out: W, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io("trace", e))?;
    Ok(())
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
