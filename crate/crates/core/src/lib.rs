//! Multi-task regression with a multi-gate mixture of experts trained under
//! gradient-norm task balancing, plus the data handling, baselines and
//! metrics around it.
//!
//! The usual flow:
//!
//! ```no_run
//! use bmoe::{data, trainer, Model, ModelKind, MmoeConfig, TrainConfig};
//!
//! let raw = data::gen_synthetic(&data::SynthConfig::default())?;
//! let split = data::split_622(&raw)?;
//! let mut model = Model::build(ModelKind::Mmoe, MmoeConfig::default(), 7)?;
//! let fitted = trainer::fit(&mut model, &split, &TrainConfig::default())?;
//! println!("{:?}", fitted.report.test);
//! # Ok::<(), bmoe::Error>(())
//! ```

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod activation;
pub mod autodiff;
pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradnorm;
pub mod io;
pub mod layers;
pub mod matrix;
pub mod metrics;
pub mod mmoe;
pub mod optim;
pub mod rng;
pub mod trainer;

pub use activation::Activation;
pub use baselines::{build_baseline, BaselineKind, Model, ModelKind};
pub use checkpoint::Checkpoint;
pub use data::{Dataset, SplitDataset, SynthConfig};
pub use error::{Error, Result};
pub use gradnorm::TaskWeights;
pub use layers::{Mode, MultiTaskModel};
pub use matrix::Matrix;
pub use metrics::TaskMetrics;
pub use mmoe::{MmoeConfig, MmoeModel};
pub use optim::OptimizerKind;
pub use trainer::{TrainConfig, TrainReport};
