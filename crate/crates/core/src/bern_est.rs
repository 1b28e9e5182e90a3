//! Bernoulli-model personalized estimation.
//!
//! Clients hold `n` coin flips with their own success probability. With a
//! known Beta prior the posterior mean is closed form; otherwise the prior
//! mean and variance are estimated from the other clients' averages.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::SyntheticDataset;
use crate::error::{ensure, Error, Result};
use crate::metrics::{evaluate_mse_scalar, gain_pct, MseEstimate};
use crate::privacy::binary_response;
use crate::rng::{Purpose, RngContract};

/// Lower bound applied to every variance estimate.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Posterior mean `(alpha + z) / (alpha + beta + n)` under a Beta prior.
pub fn posterior_mean_known(alpha: f64, beta: f64, n: u64, successes: u64) -> Result<f64> {
    ensure(alpha > 0.0 && beta > 0.0, || "alpha and beta must be > 0".into())?;
    if successes > n {
        return Err(Error::Input(format!("{successes} successes out of {n} trials")));
    }
    Ok((alpha + successes as f64) / (alpha + beta + n as f64))
}

/// Bayes risks with a known Beta prior.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnownPriorMse {
    pub personalized: f64,
    pub local: f64,
    /// `n / (n + alpha + beta)`: both the weight on the local average and
    /// the ratio of the two risks.
    pub weight: f64,
}

pub fn mse_known(alpha: f64, beta: f64, n: u64) -> Result<KnownPriorMse> {
    ensure(alpha > 0.0 && beta > 0.0, || "alpha and beta must be > 0".into())?;
    ensure(n >= 1, || "n must be >= 1".into())?;
    let s = alpha + beta;
    let nf = n as f64;
    let local = alpha * beta / (nf * s * (s + 1.0));
    let weight = nf / (nf + s);
    Ok(KnownPriorMse { personalized: local * weight, local, weight })
}

/// Leave-self-out moments and the resulting weight for one client.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimates {
    pub mu_hat: f64,
    pub sigma_hat_sq: f64,
    pub a_hat: f64,
}

/// Leave-one-out mean and variance (divisor `m - 2`) for every index,
/// from one pass of shifted sums.
fn leave_one_out(values: &[f64]) -> Vec<(f64, f64)> {
    let m = values.len() as f64;
    let center = values.iter().sum::<f64>() / m;
    let (s1, s2) = values.iter().fold((0.0, 0.0), |(a, b), &v| {
        let y = v - center;
        (a + y, b + y * y)
    });
    values
        .iter()
        .map(|&v| {
            let y = v - center;
            let shift = (s1 - y) / (m - 1.0);
            let var = ((s2 - y * y) - (m - 1.0) * shift * shift) / (m - 2.0);
            (center + shift, var.max(VARIANCE_FLOOR))
        })
        .collect()
}

fn weight(n: f64, mu: f64, var: f64, offset: f64) -> f64 {
    let denom = mu * (1.0 - mu) / var + offset + n;
    if denom <= 0.0 {
        1.0
    } else {
        (n / denom).clamp(0.0, 1.0)
    }
}

fn check_means(means: &[f64], n: usize) -> Result<()> {
    if means.len() < 3 {
        return Err(Error::TooFewClients { needed: 3, got: means.len() });
    }
    ensure(n >= 1, || "n must be >= 1".into())?;
    ensure(means.iter().all(|x| (0.0..=1.0).contains(x)), || "averages must lie in [0, 1]".into())
}

/// Moments for every client: `a_hat_i = n / (mu(1-mu)/s^2 - 1 + n)`.
pub fn all_moment_weights(means: &[f64], n: usize) -> Result<Vec<MomentEstimates>> {
    check_means(means, n)?;
    Ok(leave_one_out(means)
        .into_iter()
        .map(|(mu_hat, sigma_hat_sq)| MomentEstimates {
            mu_hat,
            sigma_hat_sq,
            a_hat: weight(n as f64, mu_hat, sigma_hat_sq, -1.0),
        })
        .collect())
}

/// Moments for client `i` alone, computed directly from the other clients.
pub fn moment_weights(means: &[f64], n: usize, i: usize) -> Result<MomentEstimates> {
    check_means(means, n)?;
    if i >= means.len() {
        return Err(Error::Input(format!("client {i} out of range")));
    }
    let m = means.len() as f64;
    let others = || means.iter().enumerate().filter(move |&(l, _)| l != i).map(|(_, &x)| x);
    let mu_hat = others().sum::<f64>() / (m - 1.0);
    let sigma_hat_sq = (others().map(|x| (x - mu_hat).powi(2)).sum::<f64>() / (m - 2.0)).max(VARIANCE_FLOOR);
    Ok(MomentEstimates { mu_hat, sigma_hat_sq, a_hat: weight(n as f64, mu_hat, sigma_hat_sq, -1.0) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BernEstimateReport {
    pub estimates: Vec<f64>,
    pub moments: Vec<MomentEstimates>,
    pub empirical: MseEstimate,
    pub local: MseEstimate,
    pub gain_pct: f64,
    /// Local privacy level of the published averages, if any.
    pub epsilon0: Option<f64>,
}

fn bernoulli_inputs(ds: &SyntheticDataset) -> Result<(Vec<f64>, usize, Vec<f64>)> {
    if ds.clients.is_empty() {
        return Err(Error::Input("dataset has no clients".into()));
    }
    let n = ds.clients[0].n();
    ensure(ds.clients.iter().all(|c| c.n() == n && c.dim() == 1), || {
        "Bernoulli clients must share n and be scalar".into()
    })?;
    Ok((ds.scalar_means(), n, ds.scalar_truths()))
}

fn report(
    estimates: Vec<f64>,
    moments: Vec<MomentEstimates>,
    means: &[f64],
    truths: &[f64],
    epsilon0: Option<f64>,
) -> Result<BernEstimateReport> {
    let empirical = evaluate_mse_scalar(&estimates, truths)?;
    let local = evaluate_mse_scalar(means, truths)?;
    Ok(BernEstimateReport {
        gain_pct: gain_pct(empirical.mse, local.mse),
        estimates,
        moments,
        empirical,
        local,
        epsilon0,
    })
}

/// `p_hat_i = a_hat_i Xbar_i + (1 - a_hat_i) mu_hat_i`, clamped to `[0, 1]`.
pub fn personalized_bernoulli(ds: &SyntheticDataset) -> Result<BernEstimateReport> {
    let (means, n, truths) = bernoulli_inputs(ds)?;
    let moments = all_moment_weights(&means, n)?;
    let estimates = combine(&means, &moments);
    report(estimates, moments, &means, &truths, None)
}

fn combine(means: &[f64], moments: &[MomentEstimates]) -> Vec<f64> {
    means
        .iter()
        .zip(moments)
        .map(|(&x, mo)| (mo.a_hat * x + (1.0 - mo.a_hat) * mo.mu_hat).clamp(0.0, 1.0))
        .collect()
}

/// Posterior means under a known Beta prior, evaluated on a dataset.
pub fn known_prior_bernoulli(ds: &SyntheticDataset, alpha: f64, beta: f64) -> Result<BernEstimateReport> {
    let (means, n, truths) = bernoulli_inputs(ds)?;
    let estimates = ds
        .clients
        .iter()
        .map(|c| posterior_mean_known(alpha, beta, n as u64, c.successes().round() as u64))
        .collect::<Result<Vec<_>>>()?;
    let mu = alpha / (alpha + beta);
    let a = n as f64 / (n as f64 + alpha + beta);
    let var = alpha * beta / ((alpha + beta).powi(2) * (alpha + beta + 1.0));
    let moments = vec![MomentEstimates { mu_hat: mu, sigma_hat_sq: var, a_hat: a }; estimates.len()];
    report(estimates, moments, &means, &truths, None)
}

/// Locally private version: clients publish their averages through the
/// binary response channel and the server forms leave-self-out moments
/// from the published values. The weight is
/// `n / (mu(1-mu)/s^2 + n)` with `mu` projected onto `[0, 1]`.
pub fn private_personalized_bernoulli(
    ds: &SyntheticDataset,
    epsilon0: f64,
    rng: &RngContract,
) -> Result<BernEstimateReport> {
    let (means, n, truths) = bernoulli_inputs(ds)?;
    check_means(&means, n)?;
    let published: Vec<f64> = ds
        .clients
        .par_iter()
        .zip(means.par_iter())
        .map(|(c, &x)| binary_response(x, epsilon0, &mut rng.stream(c.client_id(), 0, Purpose::Mechanism)))
        .collect::<Result<_>>()?;
    let moments: Vec<MomentEstimates> = leave_one_out(&published)
        .into_iter()
        .map(|(mu_hat, sigma_hat_sq)| {
            let projected = mu_hat.clamp(0.0, 1.0);
            MomentEstimates { mu_hat, sigma_hat_sq, a_hat: weight(n as f64, projected, sigma_hat_sq, 0.0) }
        })
        .collect();
    let estimates = combine(&means, &moments);
    report(estimates, moments, &means, &truths, Some(epsilon0))
}

fn bound_common(alpha: f64, beta: f64, n: usize, mean_a_sq: f64, mean_one_minus_a_sq: f64, moment_term: f64) -> f64 {
    let s = alpha + beta;
    let local = alpha * beta / (n as f64 * s * (s + 1.0));
    let prior_var = alpha * beta / (s * s * (s + 1.0));
    mean_a_sq * local + mean_one_minus_a_sq * (prior_var + moment_term)
}

/// Error bound for the moment-estimated estimator, given the averages of
/// `a_hat^2` and `(1 - a_hat)^2`.
pub fn moment_estimator_bound(
    alpha: f64,
    beta: f64,
    n: usize,
    m: usize,
    mean_a_sq: f64,
    mean_one_minus_a_sq: f64,
) -> f64 {
    let mf = m as f64;
    let moment = 3.0 * (4.0 * mf * mf * n as f64).ln() / (mf - 1.0);
    bound_common(alpha, beta, n, mean_a_sq, mean_one_minus_a_sq, moment)
}

/// Error bound for the locally private estimator.
pub fn private_estimator_bound(
    alpha: f64,
    beta: f64,
    n: usize,
    m: usize,
    epsilon0: f64,
    mean_a_sq: f64,
    mean_one_minus_a_sq: f64,
) -> f64 {
    let mf = m as f64;
    let e = epsilon0.exp();
    let moment = (e + 1.0).powi(2) * (4.0 * mf * mf * n as f64).ln() / (3.0 * (e - 1.0).powi(2) * (mf - 1.0));
    bound_common(alpha, beta, n, mean_a_sq, mean_one_minus_a_sq, moment)
}

/// Averages of `a_hat^2` and `(1 - a_hat)^2` across clients.
pub fn weight_moments(moments: &[MomentEstimates]) -> (f64, f64) {
    let m = moments.len() as f64;
    let a_sq = moments.iter().map(|mo| mo.a_hat * mo.a_hat).sum::<f64>() / m;
    let b_sq = moments.iter().map(|mo| (1.0 - mo.a_hat).powi(2)).sum::<f64>() / m;
    (a_sq, b_sq)
}
