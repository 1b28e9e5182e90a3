//! Per-client samples and whole synthetic populations.

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure, Error, Result};
use crate::prior::PriorSpec;

/// Response attached to each sample row.
#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    None,
    Real(DVector<f64>),
    Class(Vec<usize>),
}

/// One client's local data. Rows are samples, columns are coordinates;
/// storage is column-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientDataset {
    client_id: u64,
    x: DMatrix<f64>,
    targets: Targets,
}

impl ClientDataset {
    /// Plain observations `X_i1..X_in`, one per row.
    pub fn observations(client_id: u64, x: DMatrix<f64>) -> Result<Self> {
        ensure(x.nrows() >= 1, || "a client needs at least one sample".into())?;
        ensure(x.ncols() >= 1, || "observations need positive dimension".into())?;
        Ok(Self { client_id, x, targets: Targets::None })
    }

    /// Feature rows with real responses. Zero rows are allowed: such a
    /// client is driven by the prior alone.
    pub fn regression(client_id: u64, x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Dimension { expected: x.nrows(), got: y.len() });
        }
        ensure(x.ncols() >= 1, || "features need positive dimension".into())?;
        Ok(Self { client_id, x, targets: Targets::Real(y) })
    }

    /// Feature rows with class labels.
    pub fn classification(client_id: u64, x: DMatrix<f64>, labels: Vec<usize>) -> Result<Self> {
        if x.nrows() != labels.len() {
            return Err(Error::Dimension { expected: x.nrows(), got: labels.len() });
        }
        ensure(x.ncols() >= 1, || "features need positive dimension".into())?;
        Ok(Self { client_id, x, targets: Targets::Class(labels) })
    }

    pub fn client_id(&self) -> u64 {
        self.client_id
    }
    pub fn n(&self) -> usize {
        self.x.nrows()
    }
    pub fn dim(&self) -> usize {
        self.x.ncols()
    }
    /// The `n x d` sample matrix.
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }
    pub fn targets(&self) -> &Targets {
        &self.targets
    }
    pub fn y(&self) -> Option<&DVector<f64>> {
        match &self.targets {
            Targets::Real(y) => Some(y),
            _ => None,
        }
    }
    pub fn labels(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Class(l) => Some(l),
            _ => None,
        }
    }

    /// Coordinate-wise sample mean of the rows.
    pub fn sample_mean(&self) -> DVector<f64> {
        let n = self.n().max(1) as f64;
        DVector::from_iterator(self.dim(), self.x.column_iter().map(|c| c.sum() / n))
    }

    /// Sum of the first column; the success count for Bernoulli data.
    pub fn successes(&self) -> f64 {
        self.x.column(0).sum()
    }
}

/// A sampled population: true parameters plus each client's data.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub prior: PriorSpec,
    pub true_params: Vec<DVector<f64>>,
    pub clients: Vec<ClientDataset>,
    /// Mixture component of each client, when the prior has components.
    pub labels: Option<Vec<usize>>,
    /// Per-client success counts for Bernoulli populations.
    pub successes: Option<Vec<u64>>,
    /// Observation noise variance used to generate the data.
    pub sigma_x_sq: Option<f64>,
}

impl SyntheticDataset {
    pub fn m(&self) -> usize {
        self.clients.len()
    }

    /// Scalar truths for one-dimensional populations.
    pub fn scalar_truths(&self) -> Vec<f64> {
        self.true_params.iter().map(|t| t[0]).collect()
    }

    /// Per-client sample means of the first coordinate.
    pub fn scalar_means(&self) -> Vec<f64> {
        self.clients.iter().map(|c| c.sample_mean()[0]).collect()
    }
}
