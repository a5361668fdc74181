//! Per-task regression metrics: RMSE, MAE and R².

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub rmse: f64,
    pub mae: f64,
    pub r2: f64,
}

fn check(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::Shape {
            op: "metric",
            left: (y.len(), 1),
            right: (yhat.len(), 1),
        });
    }
    if y.is_empty() {
        return Err(Error::contract("metric over zero samples"));
    }
    Ok(())
}

fn sse(y: &[f64], yhat: &[f64]) -> f64 {
    y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat)?;
    Ok((sse(y, yhat) / y.len() as f64).sqrt())
}

pub fn mae(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat)?;
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

/// `1 − SSE / Σ(y − ȳ)²` with ȳ the mean of `y` itself. Undefined for constant `y`.
pub fn r2(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat)?;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let total: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    if total == 0.0 {
        return Err(Error::contract("R² is undefined for a constant target"));
    }
    Ok(1.0 - sse(y, yhat) / total)
}

pub fn task_metrics(y: &[f64], yhat: &[f64]) -> Result<TaskMetrics> {
    Ok(TaskMetrics {
        rmse: rmse(y, yhat)?,
        mae: mae(y, yhat)?,
        r2: r2(y, yhat)?,
    })
}

/// Metrics for every column of two equally shaped matrices.
pub fn per_task(y: &Matrix, yhat: &Matrix) -> Result<Vec<TaskMetrics>> {
    if y.shape() != yhat.shape() {
        return Err(Error::Shape {
            op: "per_task",
            left: y.shape(),
            right: yhat.shape(),
        });
    }
    (0..y.cols())
        .map(|c| task_metrics(&y.column(c), &yhat.column(c)))
        .collect()
}
