//! Gaussian-model personalized estimation.
//!
//! Client `i` observes `n` draws around its own mean `theta_i`, and the
//! means are spread as `N(mu, sigma_theta^2 I)` across clients. The
//! estimators shrink each local average toward the population average.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::SyntheticDataset;
use crate::error::{ensure, Error, Result};
use crate::metrics::{evaluate_mse, MseEstimate};
use crate::prior::{GaussianPrior, PriorSpec};
use crate::privacy::MechanismSpec;
use crate::rng::{Purpose, RngContract};

/// Weight on the local average, in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct ShrinkageWeight(f64);

impl ShrinkageWeight {
    pub fn new(a: f64) -> Result<Self> {
        ensure((0.0..=1.0).contains(&a), || format!("weight must lie in [0, 1], got {a}"))?;
        Ok(Self(a))
    }
    pub fn value(self) -> f64 {
        self.0
    }
}

/// `a = (s_t + s_q/(m-1)) / (s_t + s_q/(m-1) + s_x/n)`.
pub fn shrinkage_weight(
    sigma_theta_sq: f64,
    sigma_x_sq: f64,
    n: usize,
    sigma_q_sq: f64,
    m: usize,
) -> Result<ShrinkageWeight> {
    ensure(n >= 1, || "n must be >= 1".into())?;
    ensure(sigma_theta_sq >= 0.0, || "sigma_theta_sq must be >= 0".into())?;
    ensure(sigma_x_sq >= 0.0, || "sigma_x_sq must be >= 0".into())?;
    ensure(sigma_q_sq >= 0.0, || "sigma_q_sq must be >= 0".into())?;
    let channel = if sigma_q_sq > 0.0 {
        ensure(m >= 2, || format!("a noisy channel needs m >= 2, got {m}"))?;
        sigma_q_sq / (m as f64 - 1.0)
    } else {
        0.0
    };
    let spread = sigma_theta_sq + channel;
    let local = sigma_x_sq / n as f64;
    let a = if spread + local == 0.0 { 0.0 } else { spread / (spread + local) };
    ShrinkageWeight::new(a.clamp(0.0, 1.0))
}

/// Worst-case projection diagnostics for one constrained run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionStats {
    pub bound: f64,
    /// Clients with at least one coordinate moved by the projection.
    pub projected_clients: usize,
}

impl ProjectionStats {
    /// True when no coordinate needed projecting, the event on which the
    /// error guarantee is stated.
    pub fn event_held(&self) -> bool {
        self.projected_clients == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussEstimateReport {
    pub estimates: Vec<DVector<f64>>,
    pub global_mean: DVector<f64>,
    pub weight: ShrinkageWeight,
    pub mechanism: MechanismSpec,
    pub empirical: Option<MseEstimate>,
    pub theoretical_mse: Option<f64>,
    pub projection: Option<ProjectionStats>,
}

fn client_means(ds: &SyntheticDataset) -> Result<(Vec<DVector<f64>>, usize, usize)> {
    if ds.clients.is_empty() {
        return Err(Error::Input("dataset has no clients".into()));
    }
    let d = ds.clients[0].dim();
    let n = ds.clients[0].n();
    for c in &ds.clients {
        if c.dim() != d {
            return Err(Error::Dimension { expected: d, got: c.dim() });
        }
    }
    Ok((ds.clients.iter().map(|c| c.sample_mean()).collect(), n, d))
}

fn average(vectors: &[DVector<f64>]) -> DVector<f64> {
    let mut total = DVector::zeros(vectors[0].len());
    for v in vectors {
        total += v;
    }
    total / vectors.len() as f64
}

fn combine(means: &[DVector<f64>], global: &DVector<f64>, a: f64) -> Vec<DVector<f64>> {
    means.iter().map(|x| x * a + global * (1.0 - a)).collect()
}

fn gaussian_prior(ds: &SyntheticDataset) -> Option<&GaussianPrior> {
    match &ds.prior {
        PriorSpec::Gaussian(p) => Some(p),
        _ => None,
    }
}

/// `mu_hat = mean_i Xbar_i`, `theta_hat_i = a Xbar_i + (1 - a) mu_hat`.
pub fn personalized_gaussian(ds: &SyntheticDataset, a: ShrinkageWeight) -> Result<GaussEstimateReport> {
    let (means, n, d) = client_means(ds)?;
    let global_mean = average(&means);
    let estimates = combine(&means, &global_mean, a.value());
    let empirical = Some(evaluate_mse(&estimates, &ds.true_params)?);
    let theoretical_mse = gaussian_prior(ds)
        .map(|p| theoretical_mse_gaussian(d, p.sigma_x_sq(), n, ds.m(), a.value()));
    Ok(GaussEstimateReport {
        estimates,
        global_mean,
        weight: a,
        mechanism: MechanismSpec::Identity,
        empirical,
        theoretical_mse,
        projection: None,
    })
}

/// `d s_x / n * ((1 - a)/m + a)`.
pub fn theoretical_mse_gaussian(d: usize, sigma_x_sq: f64, n: usize, m: usize, a: f64) -> f64 {
    d as f64 * sigma_x_sq / n as f64 * ((1.0 - a) / m as f64 + a)
}

/// Personalized estimator where clients release their averages through
/// `mechanism`. Averages are projected coordinate-wise onto `[-b, b]`
/// before the channel (skipped for the identity channel); the weight
/// accounts for the channel noise.
pub fn constrained_personalized_gaussian(
    ds: &SyntheticDataset,
    sigma_theta_sq: f64,
    sigma_x_sq: f64,
    mechanism: MechanismSpec,
    b: f64,
    rng: &RngContract,
) -> Result<GaussEstimateReport> {
    mechanism.validate()?;
    let (means, n, d) = client_means(ds)?;
    let m = ds.m();
    if mechanism.is_identity() {
        let a = shrinkage_weight(sigma_theta_sq, sigma_x_sq, n, 0.0, m)?;
        let mut report = personalized_gaussian(ds, a)?;
        report.theoretical_mse = Some(theoretical_mse_gaussian(d, sigma_x_sq, n, m, a.value()));
        return Ok(report);
    }
    if matches!(mechanism, MechanismSpec::BinaryResponse { .. }) {
        return Err(Error::Unsupported("binary response is defined for inputs in [0, 1] only".into()));
    }
    ensure(b > 0.0 && b.is_finite(), || format!("projection bound must be > 0, got {b}"))?;
    if let Some((_, hi)) = mechanism.input_range() {
        ensure(hi >= b, || format!("mechanism range {hi} is narrower than projection bound {b}"))?;
    }
    let released: Vec<(DVector<f64>, bool)> = ds
        .clients
        .par_iter()
        .zip(means.par_iter())
        .map(|(c, x)| {
            let projected = x.map(|v| v.clamp(-b, b));
            let moved = projected != *x;
            let mut r = rng.stream(c.client_id(), 0, Purpose::Mechanism);
            Ok((mechanism.apply(&projected, &mut r)?, moved))
        })
        .collect::<Result<_>>()?;
    let mut total = DVector::zeros(d);
    let mut projected_clients = 0;
    for (q, moved) in &released {
        total += q;
        projected_clients += usize::from(*moved);
    }
    let global_mean = total / m as f64;
    let sigma_q = mechanism.sigma_q();
    let a = shrinkage_weight(sigma_theta_sq, sigma_x_sq, n, sigma_q * sigma_q, m)?;
    let estimates = combine(&means, &global_mean, a.value());
    let empirical = Some(evaluate_mse(&estimates, &ds.true_params)?);
    Ok(GaussEstimateReport {
        estimates,
        global_mean,
        weight: a,
        mechanism,
        empirical,
        theoretical_mse: Some(theoretical_mse_gaussian(d, sigma_x_sq, n, m, a.value())),
        projection: Some(ProjectionStats { bound: b, projected_clients }),
    })
}

/// `b = r + (sigma_theta + sigma_x/sqrt(n)) sqrt(ln(m^2 n))`.
pub fn clip_radius_b(r: f64, sigma_theta: f64, sigma_x: f64, n: usize, m: usize) -> f64 {
    let log_term = (m as f64 * m as f64 * n as f64).ln().max(0.0).sqrt();
    r + sigma_theta * log_term + sigma_x / (n as f64).sqrt() * log_term
}

/// Whether the population mean is treated as known.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VanTreesMode {
    KnownPrior,
    EstimatedMean,
}

/// Bayesian Cramér-Rao (van Trees) lower bound on the per-client MSE.
pub fn van_trees_bound(
    sigma_theta_sq: f64,
    sigma_x_sq: f64,
    n: usize,
    d: usize,
    m: usize,
    mode: VanTreesMode,
) -> Result<f64> {
    ensure(sigma_theta_sq > 0.0 && sigma_x_sq > 0.0, || "variances must be > 0".into())?;
    ensure(n >= 1 && m >= 1, || "n and m must be >= 1".into())?;
    let (st, sx, nf) = (sigma_theta_sq, sigma_x_sq, n as f64);
    let numerator = match mode {
        VanTreesMode::KnownPrior => st * sx,
        VanTreesMode::EstimatedMean => st * sx + sx * sx / (m as f64 * nf),
    };
    Ok(d as f64 * numerator / (nf * st + sx))
}
