use nalgebra::{DMatrix, DVector};

use crate::dataset::ClientDataset;
use crate::error::{Error, Result};

/// A client's data term as a function of its model.
pub trait LocalObjective: Sync {
    fn dim(&self) -> usize;
    fn n(&self) -> usize;
    fn loss_grad(&self, theta: &DVector<f64>) -> (f64, DVector<f64>);
}

/// `1/2 ||Y - X theta||^2`, summed over samples.
#[derive(Clone, Copy, Debug)]
pub struct LeastSquares<'a> {
    x: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
}

impl<'a> LeastSquares<'a> {
    pub fn new(client: &'a ClientDataset) -> Result<Self> {
        let y = client.y().ok_or_else(|| Error::Input("client has no real-valued targets".into()))?;
        Ok(Self { x: client.x(), y })
    }
}

impl LocalObjective for LeastSquares<'_> {
    fn dim(&self) -> usize {
        self.x.ncols()
    }
    fn n(&self) -> usize {
        self.x.nrows()
    }
    fn loss_grad(&self, theta: &DVector<f64>) -> (f64, DVector<f64>) {
        let resid = self.x * theta - self.y;
        (0.5 * resid.norm_squared(), self.x.tr_mul(&resid))
    }
}

/// Another objective multiplied by a constant, e.g. `1/sigma_x_sq` to turn
/// a squared loss into a Gaussian negative log-likelihood.
#[derive(Clone, Copy, Debug)]
pub struct Scaled<O> {
    pub inner: O,
    pub factor: f64,
}

impl<O: LocalObjective> LocalObjective for Scaled<O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn n(&self) -> usize {
        self.inner.n()
    }
    fn loss_grad(&self, theta: &DVector<f64>) -> (f64, DVector<f64>) {
        let (l, g) = self.inner.loss_grad(theta);
        (self.factor * l, g * self.factor)
    }
}

pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Binary cross-entropy of a logistic model, summed over samples.
#[derive(Clone, Copy, Debug)]
pub struct CrossEntropy<'a> {
    x: &'a DMatrix<f64>,
    labels: &'a [usize],
}

impl<'a> CrossEntropy<'a> {
    pub fn new(client: &'a ClientDataset) -> Result<Self> {
        let labels = client.labels().ok_or_else(|| Error::Input("client has no class labels".into()))?;
        if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::Input(format!("binary labels expected, found {bad}")));
        }
        Ok(Self { x: client.x(), labels })
    }
}

impl LocalObjective for CrossEntropy<'_> {
    fn dim(&self) -> usize {
        self.x.ncols()
    }
    fn n(&self) -> usize {
        self.x.nrows()
    }
    fn loss_grad(&self, theta: &DVector<f64>) -> (f64, DVector<f64>) {
        let logits = self.x * theta;
        let mut loss = 0.0;
        let mut coef = DVector::zeros(logits.len());
        for (j, (&z, &y)) in logits.iter().zip(self.labels).enumerate() {
            loss += if y == 1 { softplus(-z) } else { softplus(z) };
            coef[j] = logistic(z) - y as f64;
        }
        (loss, self.x.tr_mul(&coef))
    }
}

/// Fraction of samples whose label matches `logit > 0`.
pub fn accuracy(client: &ClientDataset, theta: &DVector<f64>) -> Result<f64> {
    let labels = client.labels().ok_or_else(|| Error::Input("client has no class labels".into()))?;
    if labels.is_empty() {
        return Err(Error::Input("no samples to score".into()));
    }
    let logits = client.x() * theta;
    let hits = logits.iter().zip(labels).filter(|(&z, &y)| usize::from(z > 0.0) == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

fn check_shapes(x: &DMatrix<f64>, y: Option<&DVector<f64>>, mu: Option<&DVector<f64>>) -> Result<()> {
    if let Some(y) = y {
        if y.len() != x.nrows() {
            return Err(Error::Dimension { expected: x.nrows(), got: y.len() });
        }
    }
    if let Some(mu) = mu {
        if mu.len() != x.ncols() {
            return Err(Error::Dimension { expected: x.ncols(), got: mu.len() });
        }
    }
    Ok(())
}

fn precision(x: &DMatrix<f64>, sigma_theta_sq: f64, sigma_x_sq: f64) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if !(sigma_theta_sq > 0.0 && sigma_x_sq > 0.0) {
        return Err(Error::Parameter(format!(
            "variances must be > 0, got {sigma_theta_sq} and {sigma_x_sq}"
        )));
    }
    let d = x.ncols();
    let mut a = x.tr_mul(x) / sigma_x_sq;
    for k in 0..d {
        a[(k, k)] += 1.0 / sigma_theta_sq;
    }
    a.cholesky().ok_or_else(|| Error::Numerical("precision matrix not positive definite".into()))
}

/// `(I/s_theta + X'X/s_x)^-1 (X'Y/s_x + mu/s_theta)`.
pub fn linreg_closed_form(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    mu: &DVector<f64>,
    sigma_theta_sq: f64,
    sigma_x_sq: f64,
) -> Result<DVector<f64>> {
    check_shapes(x, Some(y), Some(mu))?;
    let chol = precision(x, sigma_theta_sq, sigma_x_sq)?;
    Ok(chol.solve(&(x.tr_mul(y) / sigma_x_sq + mu / sigma_theta_sq)))
}

/// `Tr((I/s_theta + X'X/s_x)^-1)`, the Bayes risk of the closed form.
pub fn linreg_mse_trace(x: &DMatrix<f64>, sigma_theta_sq: f64, sigma_x_sq: f64) -> Result<f64> {
    Ok(precision(x, sigma_theta_sq, sigma_x_sq)?.inverse().trace())
}

/// Minimum-norm least squares through the SVD.
pub fn ols_local(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    check_shapes(x, Some(y), None)?;
    if x.nrows() == 0 {
        return Ok(DVector::zeros(x.ncols()));
    }
    let svd = x.clone().svd(true, true);
    let top = svd.singular_values.max();
    let eps = top * f64::EPSILON * x.nrows().max(x.ncols()) as f64;
    svd.solve(y, eps).map_err(|e| Error::Numerical(e.to_string()))
}
