//! Non-personalized and isolated baselines.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::objective::LocalObjective;
use crate::error::{ensure, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FedAvgConfig {
    pub eta: f64,
    pub rounds: usize,
    /// Full-batch gradient steps per client per round.
    pub local_steps: usize,
    pub lr_decay: f64,
    pub weight_decay: f64,
}

impl Default for FedAvgConfig {
    fn default() -> Self {
        Self { eta: 0.01, rounds: 100, local_steps: 5, lr_decay: 1.0, weight_decay: 0.0 }
    }
}

impl FedAvgConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(self.eta > 0.0 && self.eta.is_finite(), || format!("eta must be > 0, got {}", self.eta))?;
        ensure(self.rounds >= 1 && self.local_steps >= 1, || "rounds and local_steps must be >= 1".into())?;
        ensure(self.lr_decay > 0.0 && self.lr_decay <= 1.0, || "lr_decay must lie in (0, 1]".into())?;
        ensure(self.weight_decay >= 0.0, || "weight_decay must be >= 0".into())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FedAvgRun {
    pub global: DVector<f64>,
    /// Mean client loss of the global model at the start of each round.
    pub loss_history: Vec<f64>,
}

fn descend<O: LocalObjective + ?Sized>(
    obj: &O,
    mut theta: DVector<f64>,
    eta: f64,
    steps: usize,
    weight_decay: f64,
    iteration: usize,
) -> Result<DVector<f64>> {
    for _ in 0..steps {
        let (_, mut g) = obj.loss_grad(&theta);
        if weight_decay > 0.0 {
            g.axpy(weight_decay, &theta, 1.0);
        }
        theta.axpy(-eta, &g, 1.0);
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence { iteration, reason: format!("non-finite model with step size {eta}") });
    }
    Ok(theta)
}

/// Each round every client starts from the global model, runs
/// `local_steps` gradient steps on its own loss, and the server takes the
/// plain average.
pub fn fedavg_baseline<O: LocalObjective>(
    objectives: &[O],
    config: &FedAvgConfig,
    init: DVector<f64>,
) -> Result<FedAvgRun> {
    config.validate()?;
    ensure(!objectives.is_empty(), || "need at least one client".into())?;
    if let Some(o) = objectives.iter().find(|o| o.dim() != init.len()) {
        return Err(Error::Dimension { expected: init.len(), got: o.dim() });
    }
    let m = objectives.len() as f64;
    let mut global = init;
    let mut history = Vec::with_capacity(config.rounds);
    let mut eta = config.eta;
    for round in 1..=config.rounds {
        let results: Vec<(f64, DVector<f64>)> = objectives
            .par_iter()
            .map(|o| {
                let loss = o.loss_grad(&global).0;
                Ok((loss, descend(o, global.clone(), eta, config.local_steps, config.weight_decay, round)?))
            })
            .collect::<Result<_>>()?;
        let mut sum = DVector::zeros(global.len());
        let mut loss = 0.0;
        for (l, t) in &results {
            loss += l;
            sum += t;
        }
        if !loss.is_finite() {
            return Err(Error::Divergence { iteration: round, reason: "non-finite loss".into() });
        }
        history.push(loss / m);
        global = sum / m;
        for _ in 0..config.local_steps {
            eta *= config.lr_decay;
        }
    }
    Ok(FedAvgRun { global, loss_history: history })
}

/// Gradient descent on a single client's loss with no collaboration.
pub fn local_gd<O: LocalObjective + ?Sized>(
    objective: &O,
    init: DVector<f64>,
    eta: f64,
    steps: usize,
    weight_decay: f64,
) -> Result<DVector<f64>> {
    ensure(eta > 0.0, || "eta must be > 0".into())?;
    descend(objective, init, eta, steps, weight_decay, steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::objective::LeastSquares;
    use crate::prior::GaussianPrior;
    use crate::rng::RngContract;
    use crate::sampling::sample_regression_population;

    #[test]
    fn single_client_equals_local_training() {
        let prior = GaussianPrior::new(vec![0.5, -0.5], 0.1, 0.1).unwrap();
        let ds = sample_regression_population(&prior, 1, 10, 1.0, &RngContract::new(1)).unwrap();
        let obj = LeastSquares::new(&ds.clients[0]).unwrap();
        let config = FedAvgConfig { eta: 0.02, rounds: 10, local_steps: 4, ..FedAvgConfig::default() };
        let fed = fedavg_baseline(&[obj], &config, DVector::zeros(2)).unwrap();
        let local = local_gd(&obj, DVector::zeros(2), 0.02, 40, 0.0).unwrap();
        assert!((fed.global - local).norm() < 1e-14);
    }

    #[test]
    fn homogeneous_population_matches_pooled_fit() {
        let prior = GaussianPrior::new(vec![1.0, 2.0, -1.0], 1e-12, 0.1).unwrap();
        let ds = sample_regression_population(&prior, 40, 10, 1.0, &RngContract::new(2)).unwrap();
        let objs: Vec<_> = ds.clients.iter().map(|c| LeastSquares::new(c).unwrap()).collect();
        let config = FedAvgConfig { eta: 0.02, rounds: 200, local_steps: 2, ..FedAvgConfig::default() };
        let a = fedavg_baseline(&objs, &config, DVector::zeros(3)).unwrap();
        assert!((&a.global - &ds.true_params[0]).norm() < 0.05);
        let b = fedavg_baseline(&objs, &config, DVector::zeros(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn blows_up_loudly() {
        let prior = GaussianPrior::new(vec![1.0], 0.1, 0.1).unwrap();
        let ds = sample_regression_population(&prior, 3, 10, 3.0, &RngContract::new(3)).unwrap();
        let objs: Vec<_> = ds.clients.iter().map(|c| LeastSquares::new(c).unwrap()).collect();
        let config = FedAvgConfig { eta: 10.0, rounds: 200, ..FedAvgConfig::default() };
        assert!(matches!(fedavg_baseline(&objs, &config, DVector::zeros(1)), Err(Error::Divergence { .. })));
    }
}
