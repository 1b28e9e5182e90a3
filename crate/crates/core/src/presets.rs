//! Named parameter bundles for the reference experiments.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::adaped::AdapedConfig;
use crate::error::{Error, Result};
use crate::prior::{GaussianPrior, ScalarPrior};
use crate::rng::{Purpose, RngContract, SERVER};

/// Regression population: prior variance, noise variance, feature spread,
/// and the spread of the randomly drawn population mean.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinregPreset {
    pub sigma_theta_sq: f64,
    pub sigma_x_sq: f64,
    pub feature_var: f64,
    pub mean_sd: f64,
}

impl LinregPreset {
    pub const PAPER: LinregPreset =
        LinregPreset { sigma_theta_sq: 0.01, sigma_x_sq: 0.05, feature_var: 0.05, mean_sd: 0.1 };

    pub fn feature_sd(&self) -> f64 {
        self.feature_var.sqrt()
    }

    /// Draws the population mean from stream `(SERVER, 0, Prior)` and
    /// returns the resulting Gaussian prior of dimension `d`.
    pub fn prior(&self, d: usize, rng: &RngContract) -> Result<GaussianPrior> {
        let normal = Normal::new(0.0, self.mean_sd)
            .map_err(|e| Error::Parameter(e.to_string()))?;
        let mut r = rng.stream(SERVER, 0, Purpose::Prior);
        let mu = (0..d).map(|_| normal.sample(&mut r)).collect();
        GaussianPrior::new(mu, self.sigma_theta_sq, self.sigma_x_sq)
    }
}

/// Bernoulli population with the three-spike prior.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BernPreset {
    pub prior: ScalarPrior,
    pub m: usize,
    pub n: usize,
}

impl BernPreset {
    pub const THREE_SPIKE: BernPreset = BernPreset { prior: ScalarPrior::ThreeSpike, m: 10_000, n: 14 };
}

/// Locally private Gaussian estimation sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpGaussPreset {
    pub m: usize,
    pub n: usize,
    pub sigma_theta: f64,
    pub sigma_x: f64,
    pub delta: f64,
    pub epsilons: Vec<f64>,
}

impl DpGaussPreset {
    pub fn paper() -> Self {
        Self {
            m: 10_000,
            n: 15,
            sigma_theta: 0.1,
            sigma_x: 0.5,
            delta: 1e-5,
            epsilons: vec![0.5, 1.0, 2.0, 4.0, 8.0, 100.0],
        }
    }
}

/// AdaPeD step sizes `0.1 / 0.1 / 0.03` with `psi_0 = 4`.
pub fn paper_fed() -> AdapedConfig {
    AdapedConfig { eta_theta: 0.1, eta_mu: 0.1, eta_psi: 0.03, psi_init: 4.0, ..AdapedConfig::default() }
}

/// Names accepted wherever a preset can be referenced.
pub const PRESET_NAMES: [&str; 4] = ["paper-linreg", "paper-bern-3spike", "paper-dp-gauss", "paper-fed"];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linreg_prior_is_deterministic_and_shaped() {
        let rng = RngContract::new(4);
        let a = LinregPreset::PAPER.prior(50, &rng).unwrap();
        let b = LinregPreset::PAPER.prior(50, &rng).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), 50);
        assert_eq!(a.sigma_theta_sq(), 0.01);
        let spread = a.mu().iter().map(|v| v * v).sum::<f64>() / 50.0;
        assert!(spread > 0.003 && spread < 0.03, "{spread}");
    }

    #[test]
    fn fed_preset_values() {
        let c = paper_fed();
        assert_eq!((c.eta_theta, c.eta_mu, c.eta_psi, c.psi_init), (0.1, 0.1, 0.03, 4.0));
    }
}
