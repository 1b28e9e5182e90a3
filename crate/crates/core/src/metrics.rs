//! Error metrics shared by estimators and the harness.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean of per-client squared errors with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MseEstimate {
    pub mse: f64,
    pub stderr: f64,
}

/// `mean_i ||estimate_i - truth_i||^2` and the standard error of that mean
/// across clients.
pub fn evaluate_mse(estimates: &[DVector<f64>], truths: &[DVector<f64>]) -> Result<MseEstimate> {
    if estimates.len() != truths.len() {
        return Err(Error::Dimension { expected: truths.len(), got: estimates.len() });
    }
    if estimates.is_empty() {
        return Err(Error::Input("no estimates to evaluate".into()));
    }
    let errors: Result<Vec<f64>> = estimates
        .iter()
        .zip(truths)
        .map(|(e, t)| {
            if e.len() != t.len() {
                return Err(Error::Dimension { expected: t.len(), got: e.len() });
            }
            Ok((e - t).norm_squared())
        })
        .collect();
    Ok(mean_and_stderr(&errors?))
}

/// Scalar version of [`evaluate_mse`].
pub fn evaluate_mse_scalar(estimates: &[f64], truths: &[f64]) -> Result<MseEstimate> {
    if estimates.len() != truths.len() {
        return Err(Error::Dimension { expected: truths.len(), got: estimates.len() });
    }
    if estimates.is_empty() {
        return Err(Error::Input("no estimates to evaluate".into()));
    }
    let errors: Vec<f64> = estimates.iter().zip(truths).map(|(e, t)| (e - t).powi(2)).collect();
    Ok(mean_and_stderr(&errors))
}

/// Sample mean and standard error of the mean (zero for a single value).
pub fn mean_and_stderr(values: &[f64]) -> MseEstimate {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let stderr = if values.len() > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    MseEstimate { mse: mean, stderr }
}

/// Mean and sample standard deviation.
pub fn mean_and_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

/// Percentage reduction of `mse` relative to `baseline`.
pub fn gain_pct(mse: f64, baseline: f64) -> f64 {
    100.0 * (1.0 - mse / baseline)
}
