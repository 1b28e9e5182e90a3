//! Personalized learning under mixture priors.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::objective::{ols_local, LocalObjective};
use crate::dataset::ClientDataset;
use crate::error::{ensure, param, Error, Result};
use crate::mixture_est::{lloyd_cluster, normalize_log_weights, ClusterModel, ClusterSnapshot, PosteriorWeights};
use crate::prior::GaussianMixturePrior;
use crate::rng::{Purpose, RngContract, SERVER};

/// A regularizer's value and its gradient in the model.
#[derive(Clone, Debug, PartialEq)]
pub struct RegularizerValue {
    pub value: f64,
    pub gradient: DVector<f64>,
}

/// Negative log-density of `theta` under an isotropic Gaussian mixture.
/// The gradient is `sum_l w_l (theta - mu_l) / s_l^2` with `w` the
/// component responsibilities.
pub fn gmm_prior_regularizer(theta: &DVector<f64>, prior: &GaussianMixturePrior) -> Result<RegularizerValue> {
    let d = theta.len();
    if prior.centers()[0].len() != d {
        return Err(Error::Dimension { expected: prior.centers()[0].len(), got: d });
    }
    let diffs: Vec<DVector<f64>> =
        prior.centers().iter().map(|c| theta - DVector::from_column_slice(c)).collect();
    let logs: Vec<f64> = prior
        .probs()
        .iter()
        .zip(prior.component_sds())
        .zip(&diffs)
        .map(|((&p, &sd), diff)| {
            if p <= 0.0 {
                f64::NEG_INFINITY
            } else {
                let var = sd * sd;
                p.ln() - 0.5 * d as f64 * (2.0 * PI * var).ln() - diff.norm_squared() / (2.0 * var)
            }
        })
        .collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = top + logs.iter().map(|l| (l - top).exp()).sum::<f64>().ln();
    let weights = normalize_log_weights(&logs);
    let mut gradient = DVector::zeros(d);
    for ((w, sd), diff) in weights.iter().zip(prior.component_sds()).zip(&diffs) {
        gradient.axpy(w / (sd * sd), diff, 1.0);
    }
    Ok(RegularizerValue { value: -lse, gradient })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmConfig {
    pub eta: f64,
    pub rounds: usize,
    /// Gradient steps per client between server refits.
    pub local_steps: usize,
    /// Lower bound on fitted component standard deviations.
    pub sd_floor: f64,
    pub max_cluster_iters: usize,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self { eta: 0.01, rounds: 50, local_steps: 1, sd_floor: 1e-3, max_cluster_iters: 100 }
    }
}

impl GmmConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(self.eta > 0.0 && self.eta.is_finite(), || format!("eta must be > 0, got {}", self.eta))?;
        ensure(self.rounds >= 1 && self.local_steps >= 1, || "rounds and local_steps must be >= 1".into())?;
        ensure(self.sd_floor > 0.0, || "sd_floor must be > 0".into())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmmRun {
    pub theta: Vec<DVector<f64>>,
    pub prior: GaussianMixturePrior,
    /// Server fit after each round; round 0 is the fit to the initial models.
    pub fits: Vec<GaussianMixturePrior>,
}

/// Clusters the models and sets each component's sd to the within-cluster
/// root-mean-square deviation per coordinate.
fn fit_mixture(points: &[DVector<f64>], k: usize, config: &GmmConfig, rng: &RngContract, round: usize) -> Result<GaussianMixturePrior> {
    let mut r = rng.stream(SERVER, round as u64, Purpose::Cluster);
    let ClusterModel { centers, probs, assignments, .. } = lloyd_cluster(points, k, &mut r, config.max_cluster_iters)?;
    let d = points[0].len() as f64;
    let mut scatter = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(&assignments) {
        scatter[a] += (p - &centers[a]).norm_squared();
        counts[a] += 1;
    }
    let sds = scatter
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c == 0 { config.sd_floor } else { (s / (c as f64 * d)).sqrt().max(config.sd_floor) })
        .collect();
    GaussianMixturePrior::new(probs, centers.iter().map(|c| c.iter().copied().collect()).collect(), sds)
}

/// Clients descend on their loss plus the mixture regularizer; the server
/// refits the mixture to the uploaded models after every round.
pub fn gmm_prior_learning<O: LocalObjective>(
    objectives: &[O],
    k: usize,
    config: &GmmConfig,
    init: Vec<DVector<f64>>,
    rng: &RngContract,
) -> Result<GmmRun> {
    config.validate()?;
    ensure(k >= 1, || "k must be >= 1".into())?;
    if objectives.len() < k {
        return Err(Error::TooFewClients { needed: k, got: objectives.len() });
    }
    ensure(init.len() == objectives.len(), || "one initial model per client required".into())?;
    let mut theta = init;
    let mut prior = fit_mixture(&theta, k, config, rng, 0)?;
    let mut fits = vec![prior.clone()];
    for round in 1..=config.rounds {
        theta = theta
            .into_par_iter()
            .zip(objectives.par_iter())
            .map(|(mut th, obj)| {
                for _ in 0..config.local_steps {
                    let (_, g) = obj.loss_grad(&th);
                    let reg = gmm_prior_regularizer(&th, &prior)?;
                    th.axpy(-config.eta, &(g + reg.gradient), 1.0);
                }
                if th.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Divergence { iteration: round, reason: "non-finite model".into() });
                }
                Ok(th)
            })
            .collect::<Result<_>>()?;
        prior = fit_mixture(&theta, k, config, rng, round)?;
        fits.push(prior.clone());
    }
    Ok(GmmRun { theta, prior, fits })
}

/// `w_l ∝ p_l exp(-||X mu_l - Y||^2 / (2 sigma_x_sq))`.
pub fn regression_weights(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    probs: &[f64],
    centers: &[DVector<f64>],
    sigma_x_sq: f64,
) -> Result<PosteriorWeights> {
    ensure(sigma_x_sq > 0.0, || "sigma_x_sq must be > 0".into())?;
    if probs.iter().all(|&p| p <= 0.0) {
        return Err(param("all component probabilities are zero"));
    }
    let logs: Vec<f64> = probs
        .iter()
        .zip(centers)
        .map(|(&p, mu)| {
            if p <= 0.0 {
                f64::NEG_INFINITY
            } else {
                p.ln() - (x * mu - y).norm_squared() / (2.0 * sigma_x_sq)
            }
        })
        .collect();
    Ok(PosteriorWeights(normalize_log_weights(&logs)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteRegressionRun {
    pub estimates: Vec<DVector<f64>>,
    pub trajectory: Vec<ClusterSnapshot>,
}

/// Alternating minimization for regression under a discrete prior,
/// starting from each client's least-squares fit.
pub fn discrete_prior_regression(
    clients: &[ClientDataset],
    k: usize,
    rounds: usize,
    sigma_x_sq: f64,
    rng: &RngContract,
) -> Result<DiscreteRegressionRun> {
    ensure(rounds >= 1, || "need at least one round".into())?;
    if clients.len() < k {
        return Err(Error::TooFewClients { needed: k, got: clients.len() });
    }
    let targets: Vec<&DVector<f64>> = clients
        .iter()
        .map(|c| c.y().ok_or_else(|| Error::Input("client has no real-valued targets".into())))
        .collect::<Result<_>>()?;
    let mut theta: Vec<DVector<f64>> =
        clients.iter().zip(&targets).map(|(c, y)| ols_local(c.x(), y)).collect::<Result<_>>()?;
    let mut trajectory = Vec::with_capacity(rounds);
    for t in 1..=rounds {
        let mut r = rng.stream(SERVER, t as u64, Purpose::Cluster);
        let model = lloyd_cluster(&theta, k, &mut r, 100)?;
        theta = clients
            .par_iter()
            .zip(targets.par_iter())
            .map(|(c, y)| {
                let w = regression_weights(c.x(), y, &model.probs, &model.centers, sigma_x_sq)?;
                Ok(crate::mixture_est::posterior_mean_mixture(&w, &model.centers))
            })
            .collect::<Result<_>>()?;
        trajectory.push(ClusterSnapshot { round: t, centers: model.centers, probs: model.probs, inertia: model.inertia });
    }
    Ok(DiscreteRegressionRun { estimates: theta, trajectory })
}
