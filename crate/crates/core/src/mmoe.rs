//! Multi-gate mixture of experts.
//!
//! ```text
//! z   = act(x·W_e + b_e)                  shared embedding (the balancing anchor)
//! φ_k = expert_k(z)                       k = 1..K
//! g_i = softmax(z·W_gi)                   one gate per task, rows on the simplex
//! ψ_i = Σ_k g_i[:, k] ⊙ φ_k
//! ŷ_i = tower_i(ψ_i)                      one scalar per row
//! ```
//!
//! With `shared_gate` a single gate serves every task, which is the
//! one-gate MoE baseline.

use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::autodiff::{softmax_rows, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::layers::{activate, check_input, Dense, ForwardCtx, Mlp, Mode, MultiTaskModel};
use crate::matrix::Matrix;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MmoeConfig {
    pub input_dim: usize,
    pub embed_dim: usize,
    pub num_experts: usize,
    pub expert_hidden: Vec<usize>,
    pub num_tasks: usize,
    pub tower_hidden: Vec<usize>,
    pub dropout_rate: f64,
    pub activation: Activation,
}

impl Default for MmoeConfig {
    fn default() -> Self {
        MmoeConfig {
            input_dim: 5,
            embed_dim: 16,
            num_experts: 4,
            expert_hidden: vec![32],
            num_tasks: 2,
            tower_hidden: vec![16],
            dropout_rate: 0.1,
            activation: Activation::Mish,
        }
    }
}

impl MmoeConfig {
    pub fn validate(&self) -> Result<()> {
        let widths = [self.input_dim, self.embed_dim, self.num_experts, self.num_tasks];
        if widths.contains(&0)
            || self.expert_hidden.contains(&0)
            || self.tower_hidden.contains(&0)
        {
            return Err(Error::contract("all model widths and counts must be >= 1"));
        }
        if self.expert_hidden.is_empty() {
            return Err(Error::contract("experts need at least one hidden layer"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::contract(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    /// Width of every expert's output.
    pub fn expert_dim(&self) -> usize {
        *self.expert_hidden.last().unwrap_or(&self.embed_dim)
    }
}

#[derive(Debug, Clone)]
pub struct MmoeModel {
    config: MmoeConfig,
    store: ParamStore,
    embedding: Dense,
    experts: Vec<Mlp>,
    gates: Vec<ParamId>,
    towers: Vec<Mlp>,
    shared_gate: bool,
}

impl MmoeModel {
    pub fn new(config: MmoeConfig, seed: u64) -> Result<Self> {
        Self::build(config, seed, false)
    }

    /// One gate shared by all tasks.
    pub fn one_gate(config: MmoeConfig, seed: u64) -> Result<Self> {
        Self::build(config, seed, true)
    }

    fn build(config: MmoeConfig, seed: u64, shared_gate: bool) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(seed);
        let mut store = ParamStore::new();
        let c = &config;
        let embedding = Dense::new(&mut store, &mut rng, "embed", c.input_dim, c.embed_dim, true)?;
        let experts = (0..c.num_experts)
            .map(|k| {
                Mlp::new(
                    &mut store,
                    &mut rng,
                    &format!("expert{k}"),
                    c.embed_dim,
                    &c.expert_hidden,
                    None,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let num_gates = if shared_gate { 1 } else { c.num_tasks };
        let gates = (0..num_gates)
            .map(|i| {
                Dense::new(&mut store, &mut rng, &format!("gate{i}"), c.embed_dim, c.num_experts, false)
                    .map(|d| d.w)
            })
            .collect::<Result<Vec<_>>>()?;
        let towers = (0..c.num_tasks)
            .map(|i| {
                Mlp::new(
                    &mut store,
                    &mut rng,
                    &format!("tower{i}"),
                    c.expert_dim(),
                    &c.tower_hidden,
                    Some(1),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MmoeModel {
            config,
            store,
            embedding,
            experts,
            gates,
            towers,
            shared_gate,
        })
    }

    pub fn config(&self) -> &MmoeConfig {
        &self.config
    }

    pub fn has_shared_gate(&self) -> bool {
        self.shared_gate
    }

    fn gate_for(&self, task: usize) -> Result<ParamId> {
        if task >= self.config.num_tasks {
            return Err(Error::contract(format!(
                "task index {task} out of range for {} tasks",
                self.config.num_tasks
            )));
        }
        Ok(if self.shared_gate {
            self.gates[0]
        } else {
            self.gates[task]
        })
    }

    /// Embedding node `act(x·W_e + b_e)`.
    pub fn embed(&self, tape: &mut Tape, x: &Matrix) -> Result<Var> {
        check_input(x, self.config.input_dim)?;
        let xv = tape.input(x.clone());
        let h = self.embedding.forward(tape, &self.store, xv)?;
        Ok(activate(tape, h, self.config.activation))
    }

    /// Gate node for `task`: row-softmax of `z·W_g`.
    pub fn gate_weights(&self, tape: &mut Tape, z: Var, task: usize) -> Result<Var> {
        let gate = self.gate_for(task)?;
        let w = tape.param(&self.store, gate);
        let logits = tape.matmul(z, w)?;
        Ok(tape.softmax_rows(logits))
    }

    pub fn embed_values(&self, x: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let z = self.embed(&mut tape, x)?;
        Ok(tape.value(z).clone())
    }

    /// Gate distribution over experts for each row of `z` (already embedded).
    pub fn gate_values(&self, z: &Matrix, task: usize) -> Result<Matrix> {
        let w = &self.store.get(self.gate_for(task)?).value;
        Ok(softmax_rows(&z.matmul(w)?))
    }

    fn mix(&self, tape: &mut Tape, gate: Var, expert_out: &[Var]) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for (k, &phi) in expert_out.iter().enumerate() {
            let gk = tape.column(gate, k)?;
            let term = tape.mul(phi, gk)?;
            acc = Some(match acc {
                Some(a) => tape.add(a, term)?,
                None => term,
            });
        }
        acc.ok_or_else(|| Error::contract("mixture over zero experts"))
    }
}

impl MultiTaskModel for MmoeModel {
    fn num_tasks(&self) -> usize {
        self.config.num_tasks
    }

    fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn anchor(&self) -> Vec<ParamId> {
        self.embedding.ids()
    }

    fn forward(&self, tape: &mut Tape, x: &Matrix, ctx: &mut ForwardCtx<'_>) -> Result<Vec<Var>> {
        let c = &self.config;
        let z = self.embed(tape, x)?;
        let expert_out = self
            .experts
            .iter()
            .map(|e| e.forward(tape, &self.store, z, c.activation, c.dropout_rate, ctx))
            .collect::<Result<Vec<_>>>()?;

        let shared_mix = if self.shared_gate {
            let g = self.gate_weights(tape, z, 0)?;
            Some(self.mix(tape, g, &expert_out)?)
        } else {
            None
        };

        let mut outs = Vec::with_capacity(c.num_tasks);
        for (i, tower) in self.towers.iter().enumerate() {
            let psi = match shared_mix {
                Some(m) => m,
                None => {
                    let g = self.gate_weights(tape, z, i)?;
                    self.mix(tape, g, &expert_out)?
                }
            };
            outs.push(tower.forward(tape, &self.store, psi, c.activation, c.dropout_rate, ctx)?);
        }
        Ok(outs)
    }
}

impl MmoeModel {
    /// Forward in either mode, collected into a rows x N matrix.
    pub fn mode_forward(&self, x: &Matrix, mode: Mode, rng: &mut Rng) -> Result<Matrix> {
        let mut tape = Tape::new();
        let mut ctx = ForwardCtx { mode, rng };
        let outs = self.forward(&mut tape, x, &mut ctx)?;
        let cols: Vec<&Matrix> = outs.iter().map(|&v| tape.value(v)).collect();
        Matrix::hstack(&cols)
    }
}
