//! `bmoe` command-line runner.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 data or I/O error,
//! 3 numeric failure during training.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{SplitChoice, SweepParam};
use config::RunConfig;

pub(crate) const OUT_ROOT_ENV: &str = "BMOE_OUT_ROOT";

#[derive(Debug, thiserror::Error)]
pub(crate) enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("numeric: {0}")]
    Numeric(String),
    #[error("{msg}")]
    Partial { code: i32, msg: String },
}

impl CliError {
    /// Classifies an error raised while building or training a model.
    fn from_run(e: bmoe::Error) -> CliError {
        match e {
            bmoe::Error::NonFinite { .. } => CliError::Numeric(e.to_string()),
            bmoe::Error::Io { .. } | bmoe::Error::Csv(_) => CliError::Data(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }

    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Partial { code, .. } => *code,
        }
    }
}

#[derive(Parser)]
#[command(name = "bmoe", version, about = "Multi-gate mixture-of-experts regression with gradient-norm task balancing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Run config JSON; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Data CSV; overrides data.path.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory [default: $BMOE_OUT_ROOT/<command>, root `runs`].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Config override as a dot path, e.g. `train.alpha=0.3` or `lr=0.01`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load(self.config.as_deref(), &self.overrides)?;
        if let Some(d) = &self.data {
            cfg.data.path = Some(d.clone());
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one model; writes report.json, epochs.csv, model.json.
    Train {
        #[command(flatten)]
        common: Common,
        /// Print one line per epoch to stderr.
        #[arg(short, long)]
        verbose: bool,
    },
    /// Score a saved model on a CSV; writes metrics.json and predictions.csv.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// model.json written by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Chronological test part of the data, or every row.
        #[arg(long, value_enum, default_value = "test")]
        split: SplitChoice,
    },
    /// Grid over one parameter and several seeds; writes sweep.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        param: SweepParam,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        /// Cells run in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// One traced run per initial weight vector; writes trace_<w>.csv files.
    TraceWeights {
        #[command(flatten)]
        common: Common,
        /// Comma-separated initial weights summing to the task count. Repeatable;
        /// defaults to 1.5,0.5 1.3,0.7 1,1 0.7,1.3 0.5,1.5.
        #[arg(long = "weights")]
        weights: Vec<String>,
        #[arg(short, long)]
        verbose: bool,
    },
    /// Write a synthetic dataset CSV.
    GenData {
        /// Synthetic data config JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { common, verbose } => {
            let cfg = common.load()?;
            let out = cfg.out_dir(common.out.clone(), "train");
            commands::train(cfg, out, verbose)
        }
        Command::Evaluate { common, model, split } => {
            let cfg = common.load()?;
            let out = cfg.out_dir(common.out.clone(), "evaluate");
            commands::evaluate(cfg, &model, split, out)
        }
        Command::Sweep {
            common,
            param,
            values,
            seeds,
            jobs,
        } => {
            let cfg = common.load()?;
            let out = cfg.out_dir(common.out.clone(), "sweep");
            commands::sweep(cfg, param, &values, seeds, jobs, out)
        }
        Command::TraceWeights {
            common,
            weights,
            verbose,
        } => {
            let cfg = common.load()?;
            let out = cfg.out_dir(common.out.clone(), "trace-weights");
            let weights = if weights.is_empty() {
                commands::FIG6_WEIGHTS.iter().map(|w| w.to_vec()).collect()
            } else {
                weights
                    .iter()
                    .map(|w| commands::parse_weights(w))
                    .collect::<Result<Vec<_>, _>>()?
            };
            commands::trace_weights(cfg, weights, out, verbose)
        }
        Command::GenData { config, out, overrides } => commands::gen_data(config.as_deref(), &overrides, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
