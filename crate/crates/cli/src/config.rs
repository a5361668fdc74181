use std::path::{Path, PathBuf};

use bmoe::data::{self, Dataset, SplitDataset, SynthConfig, SRU_FEATURES, SRU_TARGETS};
use bmoe::{MmoeConfig, ModelKind, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

/// Where training data comes from. A CSV `path` wins over `synthetic`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    pub features: Vec<String>,
    pub targets: Vec<String>,
    /// Previous rows appended as extra features.
    pub lags: usize,
    pub synthetic: Option<SynthConfig>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            path: None,
            features: SRU_FEATURES.iter().map(|s| s.to_string()).collect(),
            targets: SRU_TARGETS.iter().map(|s| s.to_string()).collect(),
            lags: 0,
            synthetic: None,
        }
    }
}

/// One run. `model.input_dim` and `model.num_tasks` are always taken from
/// the loaded data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub kind: ModelKind,
    pub model: MmoeConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub out: Option<PathBuf>,
}

const ALIASES: &[(&str, &str)] = &[
    ("alpha", "train.alpha"),
    ("lr", "train.learning_rate"),
    ("learning_rate", "train.learning_rate"),
    ("lambda", "train.lambda"),
    ("weight_decay", "train.weight_decay"),
    ("epochs", "train.epochs"),
    ("batch", "train.batch_size"),
    ("batch_size", "train.batch_size"),
    ("seed", "train.seed"),
    ("experts", "model.num_experts"),
    ("dropout", "model.dropout_rate"),
];

fn resolve_alias(key: &str) -> &str {
    ALIASES
        .iter()
        .find(|(a, _)| *a == key)
        .map_or(key, |(_, full)| full)
}

/// Parses `raw` as JSON, falling back to a plain string.
pub fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Sets a dot-path inside a JSON document, creating objects as needed.
pub fn set_path(doc: &mut Value, key: &str, value: Value) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad override key {key:?}")));
    }
    let mut node = doc;
    for part in &parts[..parts.len() - 1] {
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        node = node
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("override {key:?}: {part:?} is not an object")))?
            .entry(part.to_string())
            .or_insert(Value::Null);
    }
    if node.is_null() {
        *node = Value::Object(Default::default());
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| CliError::Config(format!("override {key:?}: parent is not an object")))?;
    obj.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
        let mut doc = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => serde_json::to_value(RunConfig::default()).expect("default config serializes"),
        };
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got {o:?}")))?;
            set_path(&mut doc, resolve_alias(k.trim()), parse_value(v.trim()))?;
        }
        serde_json::from_value(doc).map_err(|e| CliError::Config(format!("config: {e}")))
    }

    pub fn with_override(&self, key: &str, value: Value) -> Result<RunConfig, CliError> {
        let mut doc = serde_json::to_value(self).expect("config serializes");
        set_path(&mut doc, key, value)?;
        serde_json::from_value(doc).map_err(|e| CliError::Config(format!("config: {e}")))
    }

    /// Loads the configured data, without splitting.
    pub fn load_raw(&self) -> Result<Dataset, CliError> {
        let d = &self.data;
        let raw = match (&d.path, &d.synthetic) {
            (Some(p), _) => data::load_csv(p, &d.features, &d.targets).map_err(|e| CliError::Data(e.to_string()))?,
            (None, Some(s)) => data::gen_synthetic(s).map_err(|e| CliError::Config(e.to_string()))?,
            (None, None) => {
                return Err(CliError::Config(
                    "no data: pass --data, or set data.path or data.synthetic in the config".into(),
                ))
            }
        };
        if d.lags == 0 {
            Ok(raw)
        } else {
            raw.with_lags(d.lags).map_err(|e| CliError::Data(e.to_string()))
        }
    }

    /// Loads, splits 6:2:2, normalizes, and sizes the model to the data.
    pub fn prepare(&mut self) -> Result<SplitDataset, CliError> {
        let raw = self.load_raw()?;
        let split = data::split_622(&raw).map_err(|e| CliError::Data(e.to_string()))?;
        self.model.input_dim = split.num_features();
        self.model.num_tasks = split.num_tasks();
        self.model.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.train
            .validate(self.model.num_tasks)
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(split)
    }

    /// `--out`, then the config's `out`, then `$BMOE_OUT_ROOT/<command>`
    /// (default root `runs`).
    pub fn out_dir(&self, flag: Option<PathBuf>, command: &str) -> PathBuf {
        flag.or_else(|| self.out.clone()).unwrap_or_else(|| {
            let root = std::env::var_os(crate::OUT_ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
            root.join(command)
        })
    }
}
