//! Personalized learning with population parameters learned alongside the
//! per-client models.

mod alternating;
mod baseline;
mod mixture;
mod objective;

pub use alternating::{
    client_objective, linreg_gd_run, logreg_gd_run, alternating_gd_run, ClientObjective, Freeze, GdConfig, GdInit,
    GdRun, LearnState, NoiseModel,
};
pub use baseline::{fedavg_baseline, local_gd, FedAvgConfig, FedAvgRun};
pub use mixture::{
    discrete_prior_regression, gmm_prior_learning, gmm_prior_regularizer, regression_weights, DiscreteRegressionRun, GmmConfig, GmmRun,
    RegularizerValue,
};
pub use objective::{
    accuracy, linreg_closed_form, linreg_mse_trace, logistic, ols_local, CrossEntropy, LeastSquares, LocalObjective,
    Scaled,
};

use serde::{Deserialize, Serialize};

/// One row of a learning trajectory. `client` is `None` for server-side
/// quantities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub round: usize,
    pub client: Option<u64>,
    pub quantity: String,
    pub value: f64,
}

/// CSV with columns `round,client,quantity,value`; server rows use `server`.
pub fn trajectory_csv(rows: &[TrajectoryRow]) -> String {
    let mut out = String::from("round,client,quantity,value\n");
    for r in rows {
        let who = r.client.map_or_else(|| "server".to_string(), |c| c.to_string());
        out.push_str(&format!("{},{},{},{}\n", r.round, who, r.quantity, r.value));
    }
    out
}
