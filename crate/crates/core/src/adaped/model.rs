//! Small differentiable classifiers with hand-written backward passes.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::ClientDataset;
use crate::error::{ensure, Error, Result};

/// Architecture of a classifier whose parameters live in one flat vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Classifier {
    /// `softmax(W x + b)`; parameters are `W` row-major then `b`.
    LinearSoftmax { inputs: usize, classes: usize },
    /// `softmax(W2 tanh(W1 x + b1) + b2)`; parameters are `W1, b1, W2, b2`.
    OneHidden { inputs: usize, hidden: usize, classes: usize },
}

/// Intermediate values kept for the backward pass.
pub struct Forward {
    pub logits: Vec<f64>,
    hidden: Option<Vec<f64>>,
}

impl Classifier {
    pub fn validate(&self) -> Result<()> {
        let (inputs, classes, hidden) = match *self {
            Self::LinearSoftmax { inputs, classes } => (inputs, classes, 1),
            Self::OneHidden { inputs, hidden, classes } => (inputs, classes, hidden),
        };
        ensure(inputs >= 1 && hidden >= 1, || "layer sizes must be >= 1".into())?;
        ensure(classes >= 2, || format!("need at least 2 classes, got {classes}"))
    }

    pub fn inputs(&self) -> usize {
        match *self {
            Self::LinearSoftmax { inputs, .. } | Self::OneHidden { inputs, .. } => inputs,
        }
    }

    pub fn classes(&self) -> usize {
        match *self {
            Self::LinearSoftmax { classes, .. } | Self::OneHidden { classes, .. } => classes,
        }
    }

    pub fn num_params(&self) -> usize {
        match *self {
            Self::LinearSoftmax { inputs, classes } => classes * (inputs + 1),
            Self::OneHidden { inputs, hidden, classes } => hidden * (inputs + 1) + classes * (hidden + 1),
        }
    }

    /// Gaussian initialization with the given scale.
    pub fn init<R: Rng + ?Sized>(&self, scale: f64, rng: &mut R) -> DVector<f64> {
        DVector::from_fn(self.num_params(), |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
    }

    pub fn forward(&self, params: &DVector<f64>, x: &[f64]) -> Forward {
        let p = params.as_slice();
        match *self {
            Self::LinearSoftmax { inputs, classes } => {
                let bias = &p[classes * inputs..];
                let logits = (0..classes)
                    .map(|c| dot(&p[c * inputs..(c + 1) * inputs], x) + bias[c])
                    .collect();
                Forward { logits, hidden: None }
            }
            Self::OneHidden { inputs, hidden, classes } => {
                let (w1, rest) = p.split_at(hidden * inputs);
                let (b1, rest) = rest.split_at(hidden);
                let (w2, b2) = rest.split_at(classes * hidden);
                let h: Vec<f64> = (0..hidden).map(|j| (dot(&w1[j * inputs..(j + 1) * inputs], x) + b1[j]).tanh()).collect();
                let logits = (0..classes).map(|c| dot(&w2[c * hidden..(c + 1) * hidden], &h) + b2[c]).collect();
                Forward { logits, hidden: Some(h) }
            }
        }
    }

    /// Adds `scale * d(logits . dlogits)/d(params)` into `grad`.
    pub fn backward(&self, params: &DVector<f64>, x: &[f64], fwd: &Forward, dlogits: &[f64], scale: f64, grad: &mut DVector<f64>) {
        let g = grad.as_mut_slice();
        match *self {
            Self::LinearSoftmax { inputs, classes } => {
                for c in 0..classes {
                    let dz = scale * dlogits[c];
                    for (gw, xv) in g[c * inputs..(c + 1) * inputs].iter_mut().zip(x) {
                        *gw += dz * xv;
                    }
                    g[classes * inputs + c] += dz;
                }
            }
            Self::OneHidden { inputs, hidden, classes } => {
                let h = fwd.hidden.as_ref().expect("hidden activations");
                let w2_at = hidden * (inputs + 1);
                let w2 = &params.as_slice()[w2_at..w2_at + classes * hidden];
                let mut dh = vec![0.0; hidden];
                for c in 0..classes {
                    let dz = scale * dlogits[c];
                    for j in 0..hidden {
                        g[w2_at + c * hidden + j] += dz * h[j];
                        dh[j] += dz * w2[c * hidden + j];
                    }
                    g[w2_at + classes * hidden + c] += dz;
                }
                for j in 0..hidden {
                    let da = dh[j] * (1.0 - h[j] * h[j]);
                    for (gw, xv) in g[j * inputs..(j + 1) * inputs].iter_mut().zip(x) {
                        *gw += da * xv;
                    }
                    g[hidden * inputs + j] += da;
                }
            }
        }
    }

    /// Class probabilities for one input.
    pub fn probabilities(&self, params: &DVector<f64>, x: &[f64]) -> Vec<f64> {
        let logits = self.forward(params, x).logits;
        let lp = log_softmax(&logits);
        lp.iter().map(|v| v.exp()).collect()
    }

    /// Index of the largest logit, ties to the lowest class.
    pub fn predict(&self, params: &DVector<f64>, x: &[f64]) -> usize {
        let logits = self.forward(params, x).logits;
        logits
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (c, &z)| if z > best.1 { (c, z) } else { best })
            .0
    }

    fn check(&self, params: &DVector<f64>, data: &ClientDataset) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::Dimension { expected: self.num_params(), got: params.len() });
        }
        if data.dim() != self.inputs() {
            return Err(Error::Dimension { expected: self.inputs(), got: data.dim() });
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = top + logits.iter().map(|z| (z - top).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

pub(crate) fn row(x: &DMatrix<f64>, j: usize) -> Vec<f64> {
    x.row(j).iter().copied().collect()
}

/// Mean cross-entropy over the batch rows and its gradient.
pub fn cross_entropy(model: &Classifier, params: &DVector<f64>, data: &ClientDataset, batch: &[usize]) -> Result<(f64, DVector<f64>)> {
    model.check(params, data)?;
    let labels = data.labels().ok_or_else(|| Error::Input("client has no class labels".into()))?;
    if batch.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut grad = DVector::zeros(params.len());
    for &j in batch {
        let y = labels[j];
        if y >= model.classes() {
            return Err(Error::Input(format!("label {y} out of range")));
        }
        let x = row(data.x(), j);
        let fwd = model.forward(params, &x);
        let lp = log_softmax(&fwd.logits);
        loss -= lp[y];
        let mut dz: Vec<f64> = lp.iter().map(|v| v.exp()).collect();
        dz[y] -= 1.0;
        model.backward(params, &x, &fwd, &dz, scale, &mut grad);
    }
    Ok((loss * scale, grad))
}

/// Which argument of the KL divergence is the global model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KdDirection {
    /// `KL(p_mu || p_theta)`.
    #[default]
    GlobalFirst,
    /// `KL(p_theta || p_mu)`.
    PersonalFirst,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KdValue {
    pub value: f64,
    pub grad_theta: DVector<f64>,
    pub grad_mu: DVector<f64>,
}

/// Mean over the batch of the KL divergence between the two models'
/// predictive distributions, with gradients for both parameter vectors.
pub fn kd_loss(
    model: &Classifier,
    theta: &DVector<f64>,
    mu: &DVector<f64>,
    data: &ClientDataset,
    batch: &[usize],
    direction: KdDirection,
) -> Result<KdValue> {
    model.check(theta, data)?;
    model.check(mu, data)?;
    if batch.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut value = 0.0;
    let mut grad_theta = DVector::zeros(theta.len());
    let mut grad_mu = DVector::zeros(mu.len());
    for &j in batch {
        let x = row(data.x(), j);
        let ft = model.forward(theta, &x);
        let fm = model.forward(mu, &x);
        let lt = log_softmax(&ft.logits);
        let lm = log_softmax(&fm.logits);
        // `first` is the reference distribution, `second` the approximating one.
        let (l_first, l_second) = match direction {
            KdDirection::GlobalFirst => (&lm, &lt),
            KdDirection::PersonalFirst => (&lt, &lm),
        };
        let p_first: Vec<f64> = l_first.iter().map(|v| v.exp()).collect();
        let p_second: Vec<f64> = l_second.iter().map(|v| v.exp()).collect();
        let u: Vec<f64> = l_first.iter().zip(l_second).map(|(a, b)| a - b).collect();
        let kl: f64 = p_first.iter().zip(&u).map(|(p, u)| p * u).sum();
        value += kl;
        let d_second: Vec<f64> = p_second.iter().zip(&p_first).map(|(q, p)| q - p).collect();
        let d_first: Vec<f64> = p_first.iter().zip(&u).map(|(p, u)| p * (u - kl)).collect();
        let (d_theta, d_mu) = match direction {
            KdDirection::GlobalFirst => (d_second, d_first),
            KdDirection::PersonalFirst => (d_first, d_second),
        };
        model.backward(theta, &x, &ft, &d_theta, scale, &mut grad_theta);
        model.backward(mu, &x, &fm, &d_mu, scale, &mut grad_mu);
    }
    Ok(KdValue { value: value * scale, grad_theta, grad_mu })
}

/// `f(theta) + 1/2 log(2 psi) + f_kd(theta, mu) / (2 psi)`.
pub fn local_objective(
    model: &Classifier,
    theta: &DVector<f64>,
    mu: &DVector<f64>,
    psi: f64,
    data: &ClientDataset,
    batch: &[usize],
    direction: KdDirection,
) -> Result<f64> {
    ensure(psi > 0.0, || format!("psi must be > 0, got {psi}"))?;
    let (ce, _) = cross_entropy(model, theta, data, batch)?;
    let kd = kd_loss(model, theta, mu, data, batch, direction)?.value;
    Ok(ce + 0.5 * (2.0 * psi).ln() + kd / (2.0 * psi))
}

/// Derivative of the local objective in `psi`: `1/(2 psi) - f_kd/(2 psi^2)`.
pub fn psi_gradient(psi: f64, f_kd: f64) -> f64 {
    1.0 / (2.0 * psi) - f_kd / (2.0 * psi * psi)
}

/// Fraction of rows classified correctly.
pub fn accuracy(model: &Classifier, params: &DVector<f64>, data: &ClientDataset) -> Result<f64> {
    model.check(params, data)?;
    let labels = data.labels().ok_or_else(|| Error::Input("client has no class labels".into()))?;
    if labels.is_empty() {
        return Err(Error::Input("no samples to score".into()));
    }
    let hits = (0..data.n()).filter(|&j| model.predict(params, &row(data.x(), j)) == labels[j]).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Full-batch mean cross-entropy of one client, usable by the generic
/// learners.
#[derive(Clone, Copy, Debug)]
pub struct ClassifierLoss<'a> {
    pub model: Classifier,
    pub data: &'a ClientDataset,
}

impl crate::learn::LocalObjective for ClassifierLoss<'_> {
    fn dim(&self) -> usize {
        self.model.num_params()
    }
    fn n(&self) -> usize {
        self.data.n()
    }
    fn loss_grad(&self, theta: &DVector<f64>) -> (f64, DVector<f64>) {
        let all: Vec<usize> = (0..self.data.n()).collect();
        cross_entropy(&self.model, theta, self.data, &all).expect("classifier loss on a validated client")
    }
}
