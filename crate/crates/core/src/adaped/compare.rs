//! Held-out accuracy of AdaPeD against training alone and against a single
//! federated-averaged model.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{accuracy, Classifier, ClassifierLoss};
use super::run::{adaped_run, AdapedConfig, AdapedRun};
use super::tasks::TaskSet;
use crate::dataset::ClientDataset;
use crate::error::{Error, Result};
use crate::learn::{fedavg_baseline, FedAvgConfig};
use crate::rng::RngContract;

/// Mean over clients of each personalized model's accuracy on that
/// client's held-out samples.
pub fn mean_test_accuracy(model: &Classifier, params: &[DVector<f64>], test: &[ClientDataset]) -> Result<f64> {
    if params.len() != test.len() || test.is_empty() {
        return Err(Error::Dimension { expected: test.len(), got: params.len() });
    }
    let scores = params.par_iter().zip(test).map(|(p, t)| accuracy(model, p, t)).collect::<Result<Vec<_>>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Every client trains on its own data for the same number of steps, with
/// distillation switched off.
pub fn local_only_run(clients: &[ClientDataset], config: &AdapedConfig, rng: &RngContract) -> Result<AdapedRun> {
    let alone = AdapedConfig { kd_enabled: false, sampled: clients.len(), ..config.clone() };
    adaped_run(clients, &alone, rng)
}

/// FedAvg on the classifier's mean cross-entropy, starting from zero.
pub fn fedavg_classifier(clients: &[ClientDataset], model: &Classifier, config: &FedAvgConfig) -> Result<DVector<f64>> {
    let objectives: Vec<ClassifierLoss> = clients.iter().map(|data| ClassifierLoss { model: *model, data }).collect();
    Ok(fedavg_baseline(&objectives, config, DVector::zeros(model.num_params()))?.global)
}

/// Step sizes for the FedAvg reference: `0.1`, 60 rounds of 5 local steps.
pub fn default_fedavg() -> FedAvgConfig {
    FedAvgConfig { eta: 0.1, rounds: 60, local_steps: 5, ..FedAvgConfig::default() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyComparison {
    pub adaped: f64,
    pub local_only: f64,
    pub fedavg: f64,
    /// Mean of the clients' final psi values.
    pub mean_psi: f64,
    pub server_psi: f64,
}

/// Trains all three methods on `tasks.train` and scores them on `tasks.test`.
pub fn compare_methods(
    tasks: &TaskSet,
    config: &AdapedConfig,
    fedavg: &FedAvgConfig,
    rng: &RngContract,
) -> Result<(AccuracyComparison, AdapedRun)> {
    let train = &tasks.train.clients;
    let run = adaped_run(train, config, rng)?;
    let alone = local_only_run(train, config, rng)?;
    let global = fedavg_classifier(train, &config.model, fedavg)?;
    let shared = vec![global; train.len()];
    let comparison = AccuracyComparison {
        adaped: mean_test_accuracy(&config.model, &run.state.theta, &tasks.test)?,
        local_only: mean_test_accuracy(&config.model, &alone.state.theta, &tasks.test)?,
        fedavg: mean_test_accuracy(&config.model, &shared, &tasks.test)?,
        mean_psi: run.mean_local_psi(),
        server_psi: run.state.psi,
    };
    Ok((comparison, run))
}
