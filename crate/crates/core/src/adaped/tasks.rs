//! Synthetic classification populations for AdaPeD experiments.

use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{ClientDataset, SyntheticDataset};
use crate::error::{ensure, Result};
use crate::prior::{DiscretePrior, GaussianMixturePrior};
use crate::rng::{Purpose, RngContract, SERVER};
use crate::sampling::{sample_logistic_holdout, sample_logistic_population};

/// Each client's logistic parameter is `shared + offset[cluster] + noise`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskSpec {
    pub clients: usize,
    pub samples: usize,
    pub test_samples: usize,
    pub dim: usize,
    pub clusters: usize,
    pub shared_sd: f64,
    pub offset_sd: f64,
    pub client_sd: f64,
    pub feature_sd: f64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            clients: 30,
            samples: 50,
            test_samples: 200,
            dim: 10,
            clusters: 3,
            shared_sd: 1.0,
            offset_sd: 1.5,
            client_sd: 0.3,
            feature_sd: 1.0,
        }
    }
}

impl TaskSpec {
    /// Same sizes, one task shared by every client.
    pub fn homogeneous(self) -> Self {
        Self { clusters: 1, offset_sd: 0.0, client_sd: 0.0, ..self }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskSet {
    pub train: SyntheticDataset,
    pub test: Vec<ClientDataset>,
}

fn gaussian_vector(d: usize, sd: f64, rng: &mut crate::rng::StreamRng) -> DVector<f64> {
    DVector::from_fn(d, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        sd * z
    })
}

/// Draws the cluster centers, then every client's parameter and its
/// train and test samples. Cluster membership is uniform.
pub fn cluster_tasks(spec: &TaskSpec, rng: &RngContract) -> Result<TaskSet> {
    ensure(spec.clusters >= 1 && spec.dim >= 1, || "clusters and dim must be >= 1".into())?;
    ensure(spec.shared_sd >= 0.0 && spec.offset_sd >= 0.0 && spec.client_sd >= 0.0, || {
        "scales must be >= 0".into()
    })?;
    let shared = gaussian_vector(spec.dim, spec.shared_sd, &mut rng.stream(SERVER, 0, Purpose::Prior));
    let centers: Vec<Vec<f64>> = (0..spec.clusters)
        .map(|l| {
            let offset = gaussian_vector(spec.dim, spec.offset_sd, &mut rng.stream(SERVER, l as u64 + 1, Purpose::Prior));
            (&shared + offset).iter().copied().collect()
        })
        .collect();
    let probs = vec![1.0 / spec.clusters as f64; spec.clusters];
    let train = if spec.client_sd > 0.0 {
        let prior = GaussianMixturePrior::new(probs, centers, vec![spec.client_sd; spec.clusters])?;
        sample_logistic_population(&prior, spec.clients, spec.samples, spec.feature_sd, rng)?
    } else {
        let prior = DiscretePrior::with_tight_radius(probs, centers)?;
        sample_logistic_population(&prior, spec.clients, spec.samples, spec.feature_sd, rng)?
    };
    let test = sample_logistic_holdout(&train, spec.test_samples, spec.feature_sd, rng)?;
    Ok(TaskSet { train, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn homogeneous_clients_share_one_task() {
        let set = cluster_tasks(&TaskSpec::default().homogeneous(), &RngContract::new(1)).unwrap();
        let first = &set.train.true_params[0];
        assert!(set.train.true_params.iter().all(|t| t == first));
        assert_eq!(set.test.len(), 30);
        assert_eq!(set.test[0].n(), 200);
    }

    #[test]
    fn heterogeneous_clients_differ_and_are_reproducible() {
        let a = cluster_tasks(&TaskSpec::default(), &RngContract::new(2)).unwrap();
        let b = cluster_tasks(&TaskSpec::default(), &RngContract::new(2)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.train.true_params[0], a.train.true_params[1]);
        let labels = a.train.labels.as_ref().unwrap();
        assert!(labels.iter().all(|&l| l < 3));
    }
}
