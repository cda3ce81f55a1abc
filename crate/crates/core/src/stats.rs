//! Batch-means confidence intervals.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    /// 95% half-width, `t_{0.975, k-1} sd / sqrt(k)`.
    pub half_width: f64,
    /// Standard error `sd / sqrt(k)`.
    pub se: f64,
    pub k: usize,
}

/// Averages of `n_batches` equal consecutive pieces of `trace`.
pub fn batch_averages(trace: &[f64], n_batches: usize) -> Result<Vec<f64>> {
    if n_batches == 0 || trace.len() % n_batches != 0 || trace.is_empty() {
        return Err(Error::Input(format!(
            "trace length {} is not a positive multiple of {n_batches} batches",
            trace.len()
        )));
    }
    let len = trace.len() / n_batches;
    Ok(trace
        .chunks(len)
        .map(|c| c.iter().sum::<f64>() / len as f64)
        .collect())
}

pub fn summarize(means: &[f64]) -> Result<Summary> {
    let k = means.len();
    if k < 2 {
        return Err(Error::Input(format!(
            "need at least 2 batch means, got {k}"
        )));
    }
    let kf = k as f64;
    let mean = means.iter().sum::<f64>() / kf;
    let var = means.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (kf - 1.0);
    let t = StudentsT::new(0.0, 1.0, kf - 1.0)
        .map_err(|e| Error::Numerical(e.to_string()))?
        .inverse_cdf(0.975);
    let se = var.sqrt() / kf.sqrt();
    Ok(Summary {
        mean,
        half_width: t * se,
        se,
        k,
    })
}

/// Batch means over a single trace.
pub fn batch_means(trace: &[f64], n_batches: usize) -> Result<Summary> {
    summarize(&batch_averages(trace, n_batches)?)
}
