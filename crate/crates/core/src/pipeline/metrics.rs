use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Heart-rate error summary in bpm. `r` is `None` when either series is
/// constant or fewer than two pairs exist.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sd: f64,
    pub mae: f64,
    pub rmse: f64,
    pub r: Option<f64>,
    pub n: usize,
}

/// Errors `e = pred - truth`: MAE, RMSE, sample SD of `e` (n - 1
/// denominator, 0 for a single pair) and Pearson's R of `(pred, truth)`.
pub fn compute_metrics(pred: &[f64], truth: &[f64]) -> Result<MetricsReport> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(Error::InvalidMetricInput(format!("{} predictions for {} targets", pred.len(), truth.len())));
    }
    if pred.iter().chain(truth).any(|v| !v.is_finite()) {
        return Err(Error::InvalidMetricInput("non-finite value".into()));
    }
    let n = pred.len();
    let nf = n as f64;
    let errors: Vec<f64> = pred.iter().zip(truth).map(|(p, t)| p - t).collect();
    let mae = errors.iter().map(|e| e.abs()).sum::<f64>() / nf;
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / nf).sqrt();
    let bias = errors.iter().sum::<f64>() / nf;
    let sd = if n > 1 {
        (errors.iter().map(|e| (e - bias).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(MetricsReport {
        sd,
        mae,
        rmse,
        r: pearson(pred, truth),
        n,
    })
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    if va <= 0.0 || vb <= 0.0 {
        return None;
    }
    Some((cov / (va.sqrt() * vb.sqrt())).clamp(-1.0, 1.0))
}
