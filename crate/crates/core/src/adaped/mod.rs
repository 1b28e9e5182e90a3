//! Adaptive personalization via distillation: each client trains a
//! personalized model pulled towards a shared model through a KL term whose
//! weight `1/(2 psi)` is itself learned.

mod compare;
mod density;
mod model;
mod run;
mod tasks;

pub use compare::{
    compare_methods, default_fedavg, fedavg_classifier, local_only_run, mean_test_accuracy, AccuracyComparison,
};
pub use density::{kd_population_density, KdPopulationDensity};
pub use model::{accuracy, cross_entropy, kd_loss, local_objective, psi_gradient, Classifier, ClassifierLoss, KdDirection, KdValue};
pub use run::{
    adaped_finetune_run, adaped_run, dp_adaped_run, AdapedConfig, AdapedRun, AdapedState, DpAdapedConfig, DpAdapedRun,
};
pub use tasks::{cluster_tasks, TaskSet, TaskSpec};
