//! Personalized estimation and learning for populations of clients whose
//! parameters are drawn from a shared prior.
//!
//! The crate covers closed-form empirical-Bayes estimators (Gaussian,
//! Bernoulli, discrete mixtures), their compressed and locally private
//! variants, alternating-minimization learners, AdaPeD with its
//! differentially private form, and a Rényi-DP accountant.

pub mod adaped;
pub mod bern_est;
pub mod dataset;
pub mod error;
pub mod gauss_est;
pub mod learn;
pub mod metrics;
pub mod mixture_est;
pub mod presets;
pub mod prior;
pub mod privacy;
pub mod rng;
pub mod sampling;
#[cfg(test)]
mod testutil;

pub use dataset::{ClientDataset, SyntheticDataset, Targets};
pub use error::{Error, Result};
pub use prior::{
    BetaPrior, DiscretePrior, GaussianMixturePrior, GaussianPrior, ParamPrior, PriorSpec,
    ScalarPrior,
};
pub use rng::{Purpose, RngContract, StreamRng};
