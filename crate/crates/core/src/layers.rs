//! Building blocks shared by every model: dense layers, MLP stacks, dropout,
//! and the [`MultiTaskModel`] contract the trainer drives.

use crate::activation::Activation;
use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-forward state: whether dropout is live and where its masks come from.
pub struct ForwardCtx<'a> {
    pub mode: Mode,
    pub rng: &'a mut Rng,
}

/// Anything the trainer can fit: N scalar predictions per input row.
pub trait MultiTaskModel {
    fn num_tasks(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;

    /// Layer whose per-task gradient norms drive task balancing. Empty when
    /// the model shares nothing across tasks.
    fn anchor(&self) -> Vec<ParamId>;

    /// One rows x 1 prediction node per task.
    fn forward(&self, tape: &mut Tape, x: &Matrix, ctx: &mut ForwardCtx<'_>) -> Result<Vec<Var>>;

    /// Eval-mode predictions as a rows x N matrix.
    fn predict(&self, x: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        // eval mode never draws from the rng
        let mut rng = Rng::new(0);
        let mut ctx = ForwardCtx {
            mode: Mode::Eval,
            rng: &mut rng,
        };
        let outs = self.forward(&mut tape, x, &mut ctx)?;
        let cols: Vec<&Matrix> = outs.iter().map(|&v| tape.value(v)).collect();
        Matrix::hstack(&cols)
    }
}

pub(crate) fn check_input(x: &Matrix, input_dim: usize) -> Result<()> {
    if x.cols() != input_dim {
        return Err(Error::Shape {
            op: "input",
            left: x.shape(),
            right: (x.rows(), input_dim),
        });
    }
    Ok(())
}

/// Symmetric uniform init in ±√(6/(fan_in+fan_out)).
pub(crate) fn glorot(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Matrix {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Matrix::from_fn(fan_in, fan_out, |_, _| rng.uniform_range(-limit, limit))
}

#[derive(Debug, Clone)]
pub(crate) struct Dense {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Dense {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut Rng,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
    ) -> Result<Self> {
        let w = store.add(format!("{name}.w"), glorot(rng, fan_in, fan_out))?;
        let b = if bias {
            Some(store.add(format!("{name}.b"), Matrix::zeros(1, fan_out))?)
        } else {
            None
        };
        Ok(Dense { w, b })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let mut y = tape.matmul(x, w)?;
        if let Some(b) = self.b {
            let b = tape.param(store, b);
            y = tape.add(y, b)?;
        }
        Ok(y)
    }

    pub fn ids(&self) -> Vec<ParamId> {
        std::iter::once(self.w).chain(self.b).collect()
    }
}

pub(crate) fn activate(tape: &mut Tape, x: Var, act: Activation) -> Var {
    match act {
        Activation::Relu => tape.relu(x),
        Activation::Mish => tape.mish(x),
    }
}

/// Hidden stack `dense -> activation -> dropout`, optionally closed by a
/// linear output layer.
#[derive(Debug, Clone)]
pub(crate) struct Mlp {
    pub hidden: Vec<Dense>,
    pub output: Option<Dense>,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut Rng,
        name: &str,
        input: usize,
        hidden: &[usize],
        output: Option<usize>,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(hidden.len());
        let mut width = input;
        for (j, &h) in hidden.iter().enumerate() {
            layers.push(Dense::new(store, rng, &format!("{name}.l{j}"), width, h, true)?);
            width = h;
        }
        let output = match output {
            Some(out) => Some(Dense::new(store, rng, &format!("{name}.out"), width, out, true)?),
            None => None,
        };
        Ok(Mlp {
            hidden: layers,
            output,
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        act: Activation,
        dropout_rate: f64,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<Var> {
        let mut h = x;
        for layer in &self.hidden {
            h = layer.forward(tape, store, h)?;
            h = activate(tape, h, act);
            h = dropout(tape, h, dropout_rate, ctx.mode == Mode::Train, ctx.rng)?;
        }
        if let Some(out) = &self.output {
            h = out.forward(tape, store, h)?;
        }
        Ok(h)
    }
}

/// Inverted dropout: in training each element survives with probability
/// `1 - rate` and is scaled by `1 / (1 - rate)`. Identity in eval mode.
pub fn dropout(tape: &mut Tape, x: Var, rate: f64, training: bool, rng: &mut Rng) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::contract(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok(x);
    }
    let (r, c) = tape.value(x).shape();
    let mask = dropout_mask(r, c, rate, rng);
    let m = tape.input(mask);
    tape.mul(x, m)
}

pub fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: &mut Rng) -> Matrix {
    let keep = 1.0 / (1.0 - rate);
    Matrix::from_fn(rows, cols, |_, _| if rng.uniform() < rate { 0.0 } else { keep })
}
