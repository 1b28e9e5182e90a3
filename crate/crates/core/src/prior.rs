//! Population priors over client parameters.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{ensure, param, Result};

/// Isotropic Gaussian prior `N(mu, sigma_theta_sq * I)` with Gaussian
/// observation noise of variance `sigma_x_sq`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrior {
    mu: Vec<f64>,
    sigma_theta_sq: f64,
    sigma_x_sq: f64,
}

impl GaussianPrior {
    pub fn new(mu: Vec<f64>, sigma_theta_sq: f64, sigma_x_sq: f64) -> Result<Self> {
        ensure(!mu.is_empty(), || "prior mean must have positive dimension".into())?;
        ensure(mu.iter().all(|v| v.is_finite()), || "prior mean must be finite".into())?;
        ensure(sigma_theta_sq >= 0.0 && sigma_theta_sq.is_finite(), || {
            format!("sigma_theta_sq must be >= 0, got {sigma_theta_sq}")
        })?;
        ensure(sigma_x_sq > 0.0 && sigma_x_sq.is_finite(), || {
            format!("sigma_x_sq must be > 0, got {sigma_x_sq}")
        })?;
        Ok(Self { mu, sigma_theta_sq, sigma_x_sq })
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }
    pub fn mu_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.mu)
    }
    pub fn sigma_theta_sq(&self) -> f64 {
        self.sigma_theta_sq
    }
    pub fn sigma_x_sq(&self) -> f64 {
        self.sigma_x_sq
    }
    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// `Beta(alpha, beta)` prior on a success probability.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaPrior {
    alpha: f64,
    beta: f64,
}

impl BetaPrior {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        ensure(alpha > 0.0 && alpha.is_finite(), || format!("alpha must be > 0, got {alpha}"))?;
        ensure(beta > 0.0 && beta.is_finite(), || format!("beta must be > 0, got {beta}"))?;
        Ok(Self { alpha, beta })
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }
    pub fn variance(&self) -> f64 {
        let s = self.alpha + self.beta;
        self.alpha * self.beta / (s * s * (s + 1.0))
    }
}

/// Scalar prior supported on `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalarPrior {
    Beta { alpha: f64, beta: f64 },
    /// Mass 1/3 on each of 1/4, 1/2, 3/4.
    ThreeSpike,
    Uniform,
    /// Normal restricted to `[0, 1]` by rejection.
    ClippedNormal { mean: f64, sd: f64 },
}

pub const THREE_SPIKE_SUPPORT: [f64; 3] = [0.25, 0.5, 0.75];

impl ScalarPrior {
    pub fn beta(alpha: f64, beta: f64) -> Result<Self> {
        BetaPrior::new(alpha, beta)?;
        Ok(ScalarPrior::Beta { alpha, beta })
    }

    /// Clipped normal with mean 0.5 and sd 0.15.
    pub fn clipped_normal_default() -> Self {
        ScalarPrior::ClippedNormal { mean: 0.5, sd: 0.15 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ScalarPrior::Beta { alpha, beta } => BetaPrior::new(alpha, beta).map(|_| ()),
            ScalarPrior::ThreeSpike | ScalarPrior::Uniform => Ok(()),
            ScalarPrior::ClippedNormal { mean, sd } => {
                ensure(sd > 0.0 && sd.is_finite(), || format!("sd must be > 0, got {sd}"))?;
                ensure(mean.is_finite(), || "mean must be finite".into())?;
                // Keep the acceptance rate of the rejection sampler sane.
                let (_, z) = truncation(mean, sd);
                ensure(z > 1e-6, || "clipped normal has almost no mass on [0, 1]".into())
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ScalarPrior::Beta { alpha, beta } => {
                Beta::new(alpha, beta).expect("validated beta").sample(rng)
            }
            ScalarPrior::ThreeSpike => THREE_SPIKE_SUPPORT[rng.random_range(0..3)],
            ScalarPrior::Uniform => rng.random::<f64>(),
            ScalarPrior::ClippedNormal { mean, sd } => loop {
                let z: f64 = StandardNormal.sample(rng);
                let v = mean + sd * z;
                if (0.0..=1.0).contains(&v) {
                    break v;
                }
            },
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            ScalarPrior::Beta { alpha, beta } => alpha / (alpha + beta),
            ScalarPrior::ThreeSpike | ScalarPrior::Uniform => 0.5,
            ScalarPrior::ClippedNormal { mean, sd } => {
                let ((pa, pb, _, _), z) = truncation(mean, sd);
                mean + sd * (pa - pb) / z
            }
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            ScalarPrior::Beta { alpha, beta } => {
                let s = alpha + beta;
                alpha * beta / (s * s * (s + 1.0))
            }
            ScalarPrior::ThreeSpike => 1.0 / 24.0,
            ScalarPrior::Uniform => 1.0 / 12.0,
            ScalarPrior::ClippedNormal { mean, sd } => {
                let ((pa, pb, a, b), z) = truncation(mean, sd);
                let shift = (pa - pb) / z;
                sd * sd * (1.0 + (a * pa - b * pb) / z - shift * shift)
            }
        }
    }
}

/// Standardized truncation points of `N(mean, sd^2)` to `[0, 1]`:
/// `((pdf(a), pdf(b), a, b), mass)`.
fn truncation(mean: f64, sd: f64) -> ((f64, f64, f64, f64), f64) {
    let std = Normal::standard();
    let a = (0.0 - mean) / sd;
    let b = (1.0 - mean) / sd;
    ((std.pdf(a), std.pdf(b), a, b), std.cdf(b) - std.cdf(a))
}

/// Prior that can draw a full parameter vector.
pub trait ParamPrior: Sync {
    fn dim(&self) -> usize;
    /// Draw one parameter; the second value is the component index for
    /// mixture priors.
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (DVector<f64>, Option<usize>);
}

impl ParamPrior for GaussianPrior {
    fn dim(&self) -> usize {
        self.mu.len()
    }
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (DVector<f64>, Option<usize>) {
        let sd = self.sigma_theta_sq.sqrt();
        let theta = DVector::from_iterator(
            self.mu.len(),
            self.mu.iter().map(|&m| {
                let z: f64 = StandardNormal.sample(rng);
                m + sd * z
            }),
        );
        (theta, None)
    }
}

fn check_probs(probs: &[f64], tol: f64) -> Result<()> {
    ensure(!probs.is_empty(), || "need at least one component".into())?;
    ensure(probs.iter().all(|&p| p >= 0.0 && p.is_finite()), || {
        "component probabilities must be nonnegative".into()
    })?;
    let total: f64 = probs.iter().sum();
    ensure((total - 1.0).abs() <= tol, || {
        format!("component probabilities sum to {total}, expected 1")
    })
}

fn check_centers(centers: &[Vec<f64>], k: usize) -> Result<usize> {
    ensure(centers.len() == k, || format!("expected {k} centers, got {}", centers.len()))?;
    let d = centers[0].len();
    ensure(d > 0, || "centers must have positive dimension".into())?;
    ensure(centers.iter().all(|c| c.len() == d), || "centers differ in dimension".into())?;
    ensure(centers.iter().flatten().all(|v| v.is_finite()), || "centers must be finite".into())?;
    Ok(d)
}

/// Draw an index with the given probabilities.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>() * probs.iter().sum::<f64>();
    let mut cum = 0.0;
    for (l, &p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return l;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Finite mixture of point masses at `centers`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscretePrior {
    probs: Vec<f64>,
    centers: Vec<Vec<f64>>,
    radius: f64,
}

impl DiscretePrior {
    pub fn new(probs: Vec<f64>, centers: Vec<Vec<f64>>, radius: f64) -> Result<Self> {
        check_probs(&probs, 1e-12)?;
        check_centers(&centers, probs.len())?;
        ensure(radius >= 0.0, || format!("radius must be >= 0, got {radius}"))?;
        for (l, c) in centers.iter().enumerate() {
            let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > radius * (1.0 + 1e-12) {
                return Err(param(format!("center {l} has norm {norm} > radius {radius}")));
            }
        }
        Ok(Self { probs, centers, radius })
    }

    /// Builds the prior with the smallest radius containing all centers.
    pub fn with_tight_radius(probs: Vec<f64>, centers: Vec<Vec<f64>>) -> Result<Self> {
        let r = centers
            .iter()
            .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        Self::new(probs, centers, r)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }
    pub fn center_vectors(&self) -> Vec<DVector<f64>> {
        self.centers.iter().map(|c| DVector::from_column_slice(c)).collect()
    }
    pub fn radius(&self) -> f64 {
        self.radius
    }
    pub fn k(&self) -> usize {
        self.probs.len()
    }
}

impl ParamPrior for DiscretePrior {
    fn dim(&self) -> usize {
        self.centers[0].len()
    }
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (DVector<f64>, Option<usize>) {
        let l = sample_categorical(&self.probs, rng);
        (DVector::from_column_slice(&self.centers[l]), Some(l))
    }
}

/// Mixture of isotropic Gaussians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixturePrior {
    probs: Vec<f64>,
    centers: Vec<Vec<f64>>,
    component_sds: Vec<f64>,
}

impl GaussianMixturePrior {
    pub fn new(probs: Vec<f64>, centers: Vec<Vec<f64>>, component_sds: Vec<f64>) -> Result<Self> {
        check_probs(&probs, 1e-9)?;
        check_centers(&centers, probs.len())?;
        ensure(component_sds.len() == probs.len(), || "one sd per component required".into())?;
        ensure(component_sds.iter().all(|&s| s > 0.0 && s.is_finite()), || {
            "component sds must be > 0".into()
        })?;
        Ok(Self { probs, centers, component_sds })
    }
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }
    pub fn component_sds(&self) -> &[f64] {
        &self.component_sds
    }
    pub fn k(&self) -> usize {
        self.probs.len()
    }
}

impl ParamPrior for GaussianMixturePrior {
    fn dim(&self) -> usize {
        self.centers[0].len()
    }
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (DVector<f64>, Option<usize>) {
        let l = sample_categorical(&self.probs, rng);
        let sd = self.component_sds[l];
        let theta = DVector::from_iterator(
            self.centers[l].len(),
            self.centers[l].iter().map(|&m| {
                let z: f64 = StandardNormal.sample(rng);
                m + sd * z
            }),
        );
        (theta, Some(l))
    }
}

/// Any prior, as recorded alongside a synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PriorSpec {
    Gaussian(GaussianPrior),
    Scalar(ScalarPrior),
    Discrete(DiscretePrior),
    GaussianMixture(GaussianMixturePrior),
}
