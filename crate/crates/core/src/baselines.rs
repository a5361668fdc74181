//! Comparison models sharing the [`MultiTaskModel`] contract, and the
//! [`Model`] wrapper used by the trainer, checkpoints and the CLI.
//!
//! * `single_task_mlp`: N independent networks, nothing shared. Trained
//!   jointly with equal weights this is the same as training each alone.
//! * `hard_shared`: embedding and trunk shared by all tasks, one linear head each.
//! * `one_gate_moe`: the mixture-of-experts network with a single gate for all tasks.

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::Result;
use crate::layers::{activate, check_input, Dense, ForwardCtx, Mlp, MultiTaskModel};
use crate::matrix::Matrix;
use crate::mmoe::{MmoeConfig, MmoeModel};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    SingleTaskMlp,
    HardShared,
    OneGateMoe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Mmoe,
    SingleTaskMlp,
    HardShared,
    OneGateMoe,
}

impl From<BaselineKind> for ModelKind {
    fn from(k: BaselineKind) -> Self {
        match k {
            BaselineKind::SingleTaskMlp => ModelKind::SingleTaskMlp,
            BaselineKind::HardShared => ModelKind::HardShared,
            BaselineKind::OneGateMoe => ModelKind::OneGateMoe,
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Mmoe => "mmoe",
            ModelKind::SingleTaskMlp => "single_task_mlp",
            ModelKind::HardShared => "hard_shared",
            ModelKind::OneGateMoe => "one_gate_moe",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| format!("unknown model kind {s:?}"))
    }
}

#[derive(Debug, Clone)]
pub struct HardSharedModel {
    config: MmoeConfig,
    store: ParamStore,
    embedding: Dense,
    trunk: Mlp,
    heads: Vec<Dense>,
}

impl HardSharedModel {
    pub fn new(config: MmoeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(seed);
        let mut store = ParamStore::new();
        let c = &config;
        let embedding = Dense::new(&mut store, &mut rng, "embed", c.input_dim, c.embed_dim, true)?;
        let trunk = Mlp::new(&mut store, &mut rng, "trunk", c.embed_dim, &c.expert_hidden, None)?;
        let heads = (0..c.num_tasks)
            .map(|i| Dense::new(&mut store, &mut rng, &format!("head{i}"), c.expert_dim(), 1, true))
            .collect::<Result<Vec<_>>>()?;
        Ok(HardSharedModel {
            config,
            store,
            embedding,
            trunk,
            heads,
        })
    }
}

impl MultiTaskModel for HardSharedModel {
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
        check_input(x, c.input_dim)?;
        let xv = tape.input(x.clone());
        let h = self.embedding.forward(tape, &self.store, xv)?;
        let z = activate(tape, h, c.activation);
        let shared = self.trunk.forward(tape, &self.store, z, c.activation, c.dropout_rate, ctx)?;
        self.heads
            .iter()
            .map(|head| head.forward(tape, &self.store, shared))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SingleTaskModel {
    config: MmoeConfig,
    store: ParamStore,
    nets: Vec<Mlp>,
}

impl SingleTaskModel {
    /// Each task gets `input -> embed -> expert widths -> tower widths -> 1`.
    pub fn new(config: MmoeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(seed);
        let mut store = ParamStore::new();
        let c = &config;
        let widths: Vec<usize> = std::iter::once(c.embed_dim)
            .chain(c.expert_hidden.iter().copied())
            .chain(c.tower_hidden.iter().copied())
            .collect();
        let nets = (0..c.num_tasks)
            .map(|i| Mlp::new(&mut store, &mut rng, &format!("task{i}"), c.input_dim, &widths, Some(1)))
            .collect::<Result<Vec<_>>>()?;
        Ok(SingleTaskModel { config, store, nets })
    }
}

impl MultiTaskModel for SingleTaskModel {
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
        Vec::new()
    }

    fn forward(&self, tape: &mut Tape, x: &Matrix, ctx: &mut ForwardCtx<'_>) -> Result<Vec<Var>> {
        let c = &self.config;
        check_input(x, c.input_dim)?;
        let xv = tape.input(x.clone());
        self.nets
            .iter()
            .map(|net| net.forward(tape, &self.store, xv, c.activation, c.dropout_rate, ctx))
            .collect()
    }
}

#[derive(Debug, Clone)]
enum Net {
    Mmoe(MmoeModel),
    HardShared(HardSharedModel),
    SingleTask(SingleTaskModel),
}

/// Any trainable model, tagged with its kind and construction seed.
#[derive(Debug, Clone)]
pub struct Model {
    kind: ModelKind,
    seed: u64,
    net: Net,
}

pub fn build_baseline(kind: BaselineKind, config: MmoeConfig, seed: u64) -> Result<Model> {
    Model::build(kind.into(), config, seed)
}

impl Model {
    pub fn build(kind: ModelKind, config: MmoeConfig, seed: u64) -> Result<Model> {
        let net = match kind {
            ModelKind::Mmoe => Net::Mmoe(MmoeModel::new(config, seed)?),
            ModelKind::OneGateMoe => Net::Mmoe(MmoeModel::one_gate(config, seed)?),
            ModelKind::HardShared => Net::HardShared(HardSharedModel::new(config, seed)?),
            ModelKind::SingleTaskMlp => Net::SingleTask(SingleTaskModel::new(config, seed)?),
        };
        Ok(Model { kind, seed, net })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn config(&self) -> &MmoeConfig {
        match &self.net {
            Net::Mmoe(m) => m.config(),
            Net::HardShared(m) => &m.config,
            Net::SingleTask(m) => &m.config,
        }
    }

    pub fn as_mmoe(&self) -> Option<&MmoeModel> {
        match &self.net {
            Net::Mmoe(m) => Some(m),
            _ => None,
        }
    }

    fn inner(&self) -> &dyn MultiTaskModel {
        match &self.net {
            Net::Mmoe(m) => m,
            Net::HardShared(m) => m,
            Net::SingleTask(m) => m,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn MultiTaskModel {
        match &mut self.net {
            Net::Mmoe(m) => m,
            Net::HardShared(m) => m,
            Net::SingleTask(m) => m,
        }
    }
}

impl MultiTaskModel for Model {
    fn num_tasks(&self) -> usize {
        self.inner().num_tasks()
    }

    fn input_dim(&self) -> usize {
        self.inner().input_dim()
    }

    fn params(&self) -> &ParamStore {
        self.inner().params()
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        self.inner_mut().params_mut()
    }

    fn anchor(&self) -> Vec<ParamId> {
        self.inner().anchor()
    }

    fn forward(&self, tape: &mut Tape, x: &Matrix, ctx: &mut ForwardCtx<'_>) -> Result<Vec<Var>> {
        self.inner().forward(tape, x, ctx)
    }
}
