//! Model checkpoints: one JSON document holding the kind, the architecture
//! config, every named parameter as nested row lists, the construction seed,
//! and optionally the normalization fitted on the training split.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{Model, ModelKind};
use crate::data::Normalization;
use crate::error::{Error, Result};
use crate::layers::MultiTaskModel;
use crate::matrix::Matrix;
use crate::mmoe::MmoeConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub config: MmoeConfig,
    pub params: BTreeMap<String, Vec<Vec<f64>>>,
    pub rng_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<Normalization>,
}

impl Checkpoint {
    pub fn capture(model: &Model, normalization: Option<&Normalization>) -> Checkpoint {
        Checkpoint {
            kind: model.kind(),
            config: model.config().clone(),
            params: model
                .params()
                .iter()
                .map(|(_, p)| (p.name.clone(), p.value.to_rows()))
                .collect(),
            rng_seed: model.seed(),
            normalization: normalization.cloned(),
        }
    }

    /// Rebuilds the architecture and overwrites every parameter by name.
    pub fn restore(&self) -> Result<Model> {
        let mut model = Model::build(self.kind, self.config.clone(), self.rng_seed)?;
        let store = model.params_mut();
        if store.len() != self.params.len() {
            return Err(Error::contract(format!(
                "checkpoint has {} parameters, model expects {}",
                self.params.len(),
                store.len()
            )));
        }
        for (name, rows) in &self.params {
            let p = store
                .by_name_mut(name)
                .ok_or_else(|| Error::contract(format!("unknown parameter {name:?} in checkpoint")))?;
            let value = Matrix::from_rows(rows)?;
            if value.shape() != p.value.shape() {
                return Err(Error::Shape {
                    op: "checkpoint",
                    left: value.shape(),
                    right: p.value.shape(),
                });
            }
            p.value = value;
        }
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Checkpoint> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
