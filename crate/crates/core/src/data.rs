//! Process datasets: CSV ingestion, chronological 6:2:2 splits, z-score
//! normalization fitted on the training split, and a seeded synthetic
//! multi-task generator with controllable inter-task relatedness.

use std::io::Write;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::Rng;

/// Sulfur recovery unit schema: five process variables, H₂S and SO₂ in the tail gas.
pub const SRU_FEATURES: [&str; 5] = ["x1", "x2", "x3", "x4", "x5"];
pub const SRU_TARGETS: [&str; 2] = ["y1", "y2"];

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub targets: Matrix,
    pub feature_names: Vec<String>,
    pub target_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        features: Matrix,
        targets: Matrix,
        feature_names: Vec<String>,
        target_names: Vec<String>,
    ) -> Result<Self> {
        if features.rows() != targets.rows() {
            return Err(Error::Shape {
                op: "dataset",
                left: features.shape(),
                right: targets.shape(),
            });
        }
        if feature_names.len() != features.cols() || target_names.len() != targets.cols() {
            return Err(Error::contract("column names do not match matrix widths"));
        }
        if !features.is_finite() || !targets.is_finite() {
            return Err(Error::contract("dataset contains non-finite values"));
        }
        Ok(Dataset {
            features,
            targets,
            feature_names,
            target_names,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn num_tasks(&self) -> usize {
        self.targets.cols()
    }

    pub fn rows(&self, range: Range<usize>) -> Dataset {
        Dataset {
            features: self.features.slice_rows(range.start, range.end),
            targets: self.targets.slice_rows(range.start, range.end),
            feature_names: self.feature_names.clone(),
            target_names: self.target_names.clone(),
        }
    }

    pub fn concat(parts: &[&Dataset]) -> Result<Dataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat of zero datasets"))?;
        let f: Vec<&Matrix> = parts.iter().map(|d| &d.features).collect();
        let t: Vec<&Matrix> = parts.iter().map(|d| &d.targets).collect();
        Ok(Dataset {
            features: Matrix::vstack(&f)?,
            targets: Matrix::vstack(&t)?,
            feature_names: first.feature_names.clone(),
            target_names: first.target_names.clone(),
        })
    }

    /// Appends the previous `lags` rows' features to each row; the first
    /// `lags` rows, which lack a full history, are dropped.
    pub fn with_lags(&self, lags: usize) -> Result<Dataset> {
        if lags == 0 {
            return Ok(self.clone());
        }
        if lags >= self.len() {
            return Err(Error::contract(format!(
                "lag window {lags} leaves no rows out of {}",
                self.len()
            )));
        }
        let f = self.num_features();
        let rows = self.len() - lags;
        let features = Matrix::from_fn(rows, f * (lags + 1), |r, c| {
            let (lag, col) = (c / f, c % f);
            self.features.get(r + lags - lag, col)
        });
        let mut names = self.feature_names.clone();
        for lag in 1..=lags {
            names.extend(self.feature_names.iter().map(|n| format!("{n}_lag{lag}")));
        }
        Ok(Dataset {
            features,
            targets: self.targets.slice_rows(lags, self.len()),
            feature_names: names,
            target_names: self.target_names.clone(),
        })
    }

    /// Header then one line per row; features first, targets after.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.feature_names.iter().chain(&self.target_names))?;
        for r in 0..self.len() {
            let record: Vec<String> = self
                .features
                .row(r)
                .iter()
                .chain(self.targets.row(r))
                .map(|v| v.to_string())
                .collect();
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::io("csv output", e))?;
        Ok(())
    }
}

/// Reads the named feature and target columns. Other columns are ignored.
/// Rows are numbered from 1, not counting the header.
pub fn load_csv(path: &Path, features: &[String], targets: &[String]) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header = reader.headers()?.clone();
    let position = |name: &String| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.clone()))
    };
    let fcols = features.iter().map(position).collect::<Result<Vec<_>>>()?;
    let tcols = targets.iter().map(position).collect::<Result<Vec<_>>>()?;

    let mut fdata = Vec::new();
    let mut tdata = Vec::new();
    let mut bad_rows = Vec::new();
    let mut first_problem = None;
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let parse = |col: usize| -> std::result::Result<f64, String> {
            let cell = record.get(col).unwrap_or("");
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(format!("row {row}, column {:?}: bad value {cell:?}", &header[col])),
            }
        };
        let parsed: std::result::Result<Vec<f64>, String> =
            fcols.iter().chain(&tcols).map(|&c| parse(c)).collect();
        match parsed {
            Ok(vals) => {
                fdata.extend_from_slice(&vals[..fcols.len()]);
                tdata.extend_from_slice(&vals[fcols.len()..]);
            }
            Err(msg) => {
                bad_rows.push(row);
                first_problem.get_or_insert(msg);
            }
        }
    }
    if !bad_rows.is_empty() {
        return Err(Error::BadRows {
            rows: bad_rows,
            detail: first_problem.unwrap_or_default(),
        });
    }
    let m = fdata.len() / fcols.len().max(1);
    Dataset::new(
        Matrix::from_vec(m, fcols.len(), fdata)?,
        Matrix::from_vec(m, tcols.len(), tdata)?,
        features.to_vec(),
        targets.to_vec(),
    )
}

/// Row ranges of a chronological 6:2:2 split: ⌊0.6M⌋ train, ⌊0.2M⌋
/// validation, the remainder test.
pub fn split_ranges(m: usize) -> Result<[Range<usize>; 3]> {
    if m < 5 {
        return Err(Error::TooFewRows(m));
    }
    let train = m * 6 / 10;
    let val = m * 2 / 10;
    Ok([0..train, train..train + val, train + val..m])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub std: f64,
}

impl ColumnStats {
    /// Population mean and standard deviation; a constant column gets `std = 1`.
    pub fn fit(values: &[f64]) -> ColumnStats {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        ColumnStats {
            mean,
            std: if std < 1e-12 { 1.0 } else { std },
        }
    }

    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub features: Vec<ColumnStats>,
    pub targets: Vec<ColumnStats>,
}

fn fit_columns(m: &Matrix) -> Vec<ColumnStats> {
    (0..m.cols()).map(|c| ColumnStats::fit(&m.column(c))).collect()
}

fn map_columns(m: &Matrix, stats: &[ColumnStats], f: impl Fn(&ColumnStats, f64) -> f64) -> Result<Matrix> {
    if m.cols() != stats.len() {
        return Err(Error::Shape {
            op: "normalize",
            left: m.shape(),
            right: (m.rows(), stats.len()),
        });
    }
    Ok(Matrix::from_fn(m.rows(), m.cols(), |r, c| f(&stats[c], m.get(r, c))))
}

impl Normalization {
    pub fn fit(train: &Dataset) -> Result<Normalization> {
        if train.is_empty() {
            return Err(Error::contract("cannot fit normalization on an empty dataset"));
        }
        Ok(Normalization {
            features: fit_columns(&train.features),
            targets: fit_columns(&train.targets),
        })
    }

    pub fn apply(&self, d: &Dataset) -> Result<Dataset> {
        Ok(Dataset {
            features: self.normalize_features(&d.features)?,
            targets: map_columns(&d.targets, &self.targets, ColumnStats::normalize)?,
            feature_names: d.feature_names.clone(),
            target_names: d.target_names.clone(),
        })
    }

    pub fn normalize_features(&self, x: &Matrix) -> Result<Matrix> {
        map_columns(x, &self.features, ColumnStats::normalize)
    }

    pub fn denormalize_targets(&self, y: &Matrix) -> Result<Matrix> {
        map_columns(y, &self.targets, ColumnStats::denormalize)
    }

    pub fn denormalize(&self, d: &Dataset) -> Result<Dataset> {
        Ok(Dataset {
            features: map_columns(&d.features, &self.features, ColumnStats::denormalize)?,
            targets: self.denormalize_targets(&d.targets)?,
            feature_names: d.feature_names.clone(),
            target_names: d.target_names.clone(),
        })
    }
}

/// Normalized chronological splits plus the train-fitted statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub normalization: Normalization,
}

impl SplitDataset {
    pub fn num_tasks(&self) -> usize {
        self.train.num_tasks()
    }

    pub fn num_features(&self) -> usize {
        self.train.num_features()
    }
}

/// Raw chronological 6:2:2 split.
pub fn chronological_split(d: &Dataset) -> Result<[Dataset; 3]> {
    let [a, b, c] = split_ranges(d.len())?;
    Ok([d.rows(a), d.rows(b), d.rows(c)])
}

/// Splits 6:2:2 and normalizes all three parts with statistics fitted on
/// the training part.
pub fn split_622(d: &Dataset) -> Result<SplitDataset> {
    let [train, val, test] = chronological_split(d)?;
    let normalization = Normalization::fit(&train)?;
    Ok(SplitDataset {
        train: normalization.apply(&train)?,
        val: normalization.apply(&val)?,
        test: normalization.apply(&test)?,
        normalization,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_samples: usize,
    pub num_features: usize,
    pub num_tasks: usize,
    /// Correlation between the noise-free targets; negative values give
    /// adjacent tasks opposite signs on the shared component.
    pub relatedness: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_samples: 1000,
            num_features: 5,
            num_tasks: 2,
            relatedness: 0.5,
            noise_std: 0.1,
            seed: 42,
        }
    }
}

/// Hidden units per random signal function.
const SIGNAL_UNITS: usize = 24;

/// A fixed random function `Σ_j a_j tanh(b_j·x + c_j)` of the features, with
/// `a_j = ±1`, `b_j ~ N(0, 16/F)` and `c_j ~ N(0, 1/4)`.
fn random_signal(rng: &mut Rng, x: &Matrix) -> Vec<f64> {
    let f = x.cols();
    let scale = 4.0 / (f as f64).sqrt();
    let units: Vec<(f64, Vec<f64>, f64)> = (0..SIGNAL_UNITS)
        .map(|_| {
            let b: Vec<f64> = (0..f).map(|_| rng.normal() * scale).collect();
            let c = rng.normal() * 0.5;
            let a = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
            (a, b, c)
        })
        .collect();
    (0..x.rows())
        .map(|r| {
            let row = x.row(r);
            units
                .iter()
                .map(|(a, b, c)| {
                    let pre: f64 = row.iter().zip(b).map(|(xv, bv)| xv * bv).sum::<f64>() + c;
                    a * pre.tanh()
                })
                .sum()
        })
        .collect()
}

fn center(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Zero-mean, unit population variance signals, mutually orthogonal over
/// the sample (Gram–Schmidt in generation order).
fn orthonormal_signals(rng: &mut Rng, x: &Matrix, count: usize) -> Vec<Vec<f64>> {
    let n = x.rows() as f64;
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut s = random_signal(rng, x);
        center(&mut s);
        for b in &basis {
            let proj = dot(&s, b) / dot(b, b);
            s.iter_mut().zip(b).for_each(|(v, bv)| *v -= proj * bv);
        }
        let norm = (dot(&s, &s) / n).sqrt();
        if norm > 1e-12 {
            s.iter_mut().for_each(|v| *v /= norm);
        }
        basis.push(s);
    }
    basis
}

/// Noise-free target matrix and the sampled features.
pub fn synthetic_parts(cfg: &SynthConfig) -> Result<(Matrix, Matrix)> {
    if !(cfg.relatedness.abs() <= 1.0) {
        return Err(Error::contract(format!(
            "relatedness {} outside [-1, 1]",
            cfg.relatedness
        )));
    }
    if !(cfg.noise_std >= 0.0) {
        return Err(Error::contract("noise_std must be >= 0"));
    }
    if cfg.num_samples < 2 || cfg.num_features == 0 || cfg.num_tasks == 0 {
        return Err(Error::contract(
            "synthetic data needs >= 2 samples, >= 1 feature and >= 1 task",
        ));
    }
    let mut rng = Rng::new(cfg.seed);
    let (m, f, n) = (cfg.num_samples, cfg.num_features, cfg.num_tasks);
    let x = Matrix::from_fn(m, f, |_, _| rng.normal());
    let signals = orthonormal_signals(&mut rng, &x, n + 1);
    let shared = &signals[0];
    let rho = cfg.relatedness;
    let (ws, wp) = (rho.abs().sqrt(), (1.0 - rho.abs()).sqrt());
    let clean = Matrix::from_fn(m, n, |r, i| {
        let sign = if rho < 0.0 && i % 2 == 1 { -1.0 } else { 1.0 };
        if wp == 0.0 {
            sign * ws * shared[r]
        } else {
            sign * ws * shared[r] + wp * signals[i + 1][r]
        }
    });
    Ok((x, clean))
}

/// Features `x ~ N(0, I)`; target `i` is
/// `sign_i·√|ρ|·shared(x) + √(1−|ρ|)·private_i(x) + noise`, where `sign_i`
/// alternates between tasks when `ρ < 0`.
pub fn gen_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    let (x, clean) = synthetic_parts(cfg)?;
    // noise comes from its own stream so it never perturbs the signals
    let mut noise_rng = Rng::new(crate::rng::derive_seed(cfg.seed, 0x4E01));
    let targets = clean.map(|v| v + cfg.noise_std * noise_rng.normal());
    Dataset::new(
        x,
        targets,
        (1..=cfg.num_features).map(|i| format!("x{i}")).collect(),
        (1..=cfg.num_tasks).map(|i| format!("y{i}")).collect(),
    )
}
