//! Synthetic population generators.
//!
//! Client `i` draws its parameter from stream `(i, 0, Prior)` and its
//! samples from `(i, 0, Data)`, so a client's data depends only on its id.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::dataset::{ClientDataset, SyntheticDataset};
use crate::error::{ensure, Result};
use crate::prior::{
    DiscretePrior, GaussianMixturePrior, GaussianPrior, ParamPrior, PriorSpec, ScalarPrior,
};
use crate::rng::{Purpose, RngContract};

fn check_sizes(m: usize, n: usize) -> Result<()> {
    ensure(m >= 1, || "m must be >= 1".into())?;
    ensure(n >= 1, || "n must be >= 1".into())
}

fn ids(m: usize) -> Vec<u64> {
    (0..m as u64).collect()
}

fn gaussian_rows<R: Rng + ?Sized>(
    center: &DVector<f64>,
    sd: f64,
    n: usize,
    rng: &mut R,
) -> DMatrix<f64> {
    // Fill row by row so the draw order does not depend on storage layout.
    let d = center.len();
    let mut x = DMatrix::zeros(n, d);
    for j in 0..n {
        for c in 0..d {
            let z: f64 = StandardNormal.sample(rng);
            x[(j, c)] = center[c] + sd * z;
        }
    }
    x
}

/// `theta_i ~ N(mu, sigma_theta^2 I)`, `X_ij ~ N(theta_i, sigma_x^2 I)`.
pub fn sample_gaussian_population(
    prior: &GaussianPrior,
    m: usize,
    n: usize,
    rng: &RngContract,
) -> Result<SyntheticDataset> {
    check_sizes(m, n)?;
    sample_gaussian_clients(prior, &ids(m), n, rng)
}

/// As [`sample_gaussian_population`] for an explicit list of client ids.
pub fn sample_gaussian_clients(
    prior: &GaussianPrior,
    client_ids: &[u64],
    n: usize,
    rng: &RngContract,
) -> Result<SyntheticDataset> {
    check_sizes(client_ids.len(), n)?;
    let sd_x = prior.sigma_x_sq().sqrt();
    let drawn: Vec<(DVector<f64>, ClientDataset)> = client_ids
        .par_iter()
        .map(|&id| {
            let (theta, _) = prior.draw(&mut rng.stream(id, 0, Purpose::Prior));
            let x = gaussian_rows(&theta, sd_x, n, &mut rng.stream(id, 0, Purpose::Data));
            let client = ClientDataset::observations(id, x)?;
            Ok((theta, client))
        })
        .collect::<Result<_>>()?;
    let (true_params, clients) = drawn.into_iter().unzip();
    Ok(SyntheticDataset {
        prior: PriorSpec::Gaussian(prior.clone()),
        true_params,
        clients,
        labels: None,
        successes: None,
        sigma_x_sq: Some(prior.sigma_x_sq()),
    })
}

/// `p_i ~ prior`, `X_ij ~ Bern(p_i)`; success counts are kept.
pub fn sample_bernoulli_population(
    prior: &ScalarPrior,
    m: usize,
    n: usize,
    rng: &RngContract,
) -> Result<SyntheticDataset> {
    prior.validate()?;
    check_sizes(m, n)?;
    let probs: Vec<f64> = (0..m as u64)
        .into_par_iter()
        .map(|id| prior.sample(&mut rng.stream(id, 0, Purpose::Prior)))
        .collect();
    let mut ds = sample_bernoulli_with_probs(&probs, n, rng)?;
    ds.prior = PriorSpec::Scalar(*prior);
    Ok(ds)
}

/// Bernoulli data for fixed success probabilities, one per client.
pub fn sample_bernoulli_with_probs(
    probs: &[f64],
    n: usize,
    rng: &RngContract,
) -> Result<SyntheticDataset> {
    check_sizes(probs.len(), n)?;
    ensure(probs.iter().all(|p| (0.0..=1.0).contains(p)), || {
        "success probabilities must lie in [0, 1]".into()
    })?;
    let clients: Vec<ClientDataset> = probs
        .par_iter()
        .enumerate()
        .map(|(i, &p)| {
            let mut r = rng.stream(i as u64, 0, Purpose::Data);
            let x = DMatrix::from_fn(n, 1, |_, _| if r.random::<f64>() < p { 1.0 } else { 0.0 });
            ClientDataset::observations(i as u64, x)
        })
        .collect::<Result<_>>()?;
    let successes = clients.iter().map(|c| c.successes() as u64).collect();
    Ok(SyntheticDataset {
        prior: PriorSpec::Scalar(ScalarPrior::Uniform),
        true_params: probs.iter().map(|&p| DVector::from_element(1, p)).collect(),
        clients,
        labels: None,
        successes: Some(successes),
        sigma_x_sq: None,
    })
}

/// `theta_i = mu_l` with probability `p_l`, `X_ij ~ N(theta_i, sigma_x^2 I)`.
pub fn sample_mixture_population(
    prior: &DiscretePrior,
    m: usize,
    n: usize,
    sigma_x_sq: f64,
    rng: &RngContract,
) -> Result<SyntheticDataset> {
    check_sizes(m, n)?;
    ensure(sigma_x_sq > 0.0, || format!("sigma_x_sq must be > 0, got {sigma_x_sq}"))?;
    let sd_x = sigma_x_sq.sqrt();
    let drawn: Vec<(DVector<f64>, usize, ClientDataset)> = (0..m as u64)
        .into_par_iter()
        .map(|id| {
            let (theta, label) = prior.draw(&mut rng.stream(id, 0, Purpose::Prior));
            let x = gaussian_rows(&theta, sd_x, n, &mut rng.stream(id, 0, Purpose::Data));
            Ok((theta, label.unwrap_or(0), ClientDataset::observations(id, x)?))
        })
        .collect::<Result<_>>()?;
    let mut true_params = Vec::with_capacity(m);
    let mut labels = Vec::with_capacity(m);
    let mut clients = Vec::with_capacity(m);
    for (t, l, c) in drawn {
        true_params.push(t);
        labels.push(l);
        clients.push(c);
    }
    Ok(SyntheticDataset {
        prior: PriorSpec::Discrete(prior.clone()),
        true_params,
        clients,
        labels: Some(labels),
        successes: None,
        sigma_x_sq: Some(sigma_x_sq),
    })
}

fn feature_matrix<R: Rng + ?Sized>(n: usize, d: usize, feature_sd: f64, rng: &mut R) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(n, d);
    for j in 0..n {
        for c in 0..d {
            let z: f64 = StandardNormal.sample(rng);
            x[(j, c)] = feature_sd * z;
        }
    }
    x
}

/// `Y_i = X_i theta_i + w_i` with Gaussian features and noise.
pub fn sample_regression_population(
    prior: &GaussianPrior,
    m: usize,
    n: usize,
    feature_sd: f64,
    rng: &RngContract,
) -> Result<SyntheticDataset> {
    let mut ds = sample_regression_with(prior, prior.sigma_x_sq(), m, n, feature_sd, rng)?;
    ds.prior = PriorSpec::Gaussian(prior.clone());
    Ok(ds)
}

/// Regression population for any parameter prior.
pub fn sample_regression_with<P: ParamPrior + ToPriorSpec>(
    prior: &P,
    sigma_x_sq: f64,
    m: usize,
    n: usize,
    feature_sd: f64,
    rng: &RngContract,
) -> Result<SyntheticDataset> {
    check_sizes(m, n)?;
    ensure(feature_sd > 0.0, || format!("feature_sd must be > 0, got {feature_sd}"))?;
    ensure(sigma_x_sq >= 0.0, || format!("sigma_x_sq must be >= 0, got {sigma_x_sq}"))?;
    let d = prior.dim();
    let sd_x = sigma_x_sq.sqrt();
    let drawn: Vec<(DVector<f64>, Option<usize>, ClientDataset)> = (0..m as u64)
        .into_par_iter()
        .map(|id| {
            let (theta, label) = prior.draw(&mut rng.stream(id, 0, Purpose::Prior));
            let mut r = rng.stream(id, 0, Purpose::Data);
            let x = feature_matrix(n, d, feature_sd, &mut r);
            let mut y = &x * &theta;
            for v in y.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut r);
                *v += sd_x * z;
            }
            Ok((theta, label, ClientDataset::regression(id, x, y)?))
        })
        .collect::<Result<_>>()?;
    Ok(assemble(prior.to_spec(), drawn, Some(sigma_x_sq)))
}

/// Binary classification: `y_ij ~ Bern(sigmoid(<x_ij, theta_i>))`,
/// stored as class index 0 or 1.
pub fn sample_logistic_population<P: ParamPrior + ToPriorSpec>(
    prior: &P,
    m: usize,
    n: usize,
    feature_sd: f64,
    rng: &RngContract,
) -> Result<SyntheticDataset> {
    check_sizes(m, n)?;
    ensure(feature_sd > 0.0, || format!("feature_sd must be > 0, got {feature_sd}"))?;
    let drawn: Vec<(DVector<f64>, Option<usize>, ClientDataset)> = (0..m as u64)
        .into_par_iter()
        .map(|id| {
            let (theta, label) = prior.draw(&mut rng.stream(id, 0, Purpose::Prior));
            let client = logistic_client(id, &theta, n, feature_sd, &mut rng.stream(id, 0, Purpose::Data))?;
            Ok((theta, label, client))
        })
        .collect::<Result<_>>()?;
    Ok(assemble(prior.to_spec(), drawn, None))
}

/// Fresh held-out samples for each client of a logistic population,
/// drawn from the stream `(i, 0, Split)`.
pub fn sample_logistic_holdout(
    population: &SyntheticDataset,
    n: usize,
    feature_sd: f64,
    rng: &RngContract,
) -> Result<Vec<ClientDataset>> {
    ensure(n >= 1, || "n must be >= 1".into())?;
    population
        .true_params
        .par_iter()
        .zip(population.clients.par_iter())
        .map(|(theta, c)| {
            let id = c.client_id();
            logistic_client(id, theta, n, feature_sd, &mut rng.stream(id, 0, Purpose::Split))
        })
        .collect()
}

fn logistic_client<R: Rng + ?Sized>(
    id: u64,
    theta: &DVector<f64>,
    n: usize,
    feature_sd: f64,
    rng: &mut R,
) -> Result<ClientDataset> {
    let x = feature_matrix(n, theta.len(), feature_sd, rng);
    let logits = &x * theta;
    let labels = logits
        .iter()
        .map(|&z| usize::from(rng.random::<f64>() < 1.0 / (1.0 + (-z).exp())))
        .collect();
    ClientDataset::classification(id, x, labels)
}

fn assemble(
    prior: PriorSpec,
    drawn: Vec<(DVector<f64>, Option<usize>, ClientDataset)>,
    sigma_x_sq: Option<f64>,
) -> SyntheticDataset {
    let has_labels = drawn.iter().all(|(_, l, _)| l.is_some());
    let mut true_params = Vec::with_capacity(drawn.len());
    let mut labels = Vec::with_capacity(drawn.len());
    let mut clients = Vec::with_capacity(drawn.len());
    for (t, l, c) in drawn {
        true_params.push(t);
        labels.push(l.unwrap_or(0));
        clients.push(c);
    }
    SyntheticDataset {
        prior,
        true_params,
        clients,
        labels: has_labels.then_some(labels),
        successes: None,
        sigma_x_sq,
    }
}

/// Conversion of a concrete prior into the recorded [`PriorSpec`].
pub trait ToPriorSpec {
    fn to_spec(&self) -> PriorSpec;
}

impl ToPriorSpec for GaussianPrior {
    fn to_spec(&self) -> PriorSpec {
        PriorSpec::Gaussian(self.clone())
    }
}
impl ToPriorSpec for DiscretePrior {
    fn to_spec(&self) -> PriorSpec {
        PriorSpec::Discrete(self.clone())
    }
}
impl ToPriorSpec for GaussianMixturePrior {
    fn to_spec(&self) -> PriorSpec {
        PriorSpec::GaussianMixture(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seed() -> RngContract {
        RngContract::new(20240601)
    }

    #[test]
    fn zero_variance_prior_pins_theta() {
        let prior = GaussianPrior::new(vec![1.5, -2.0], 0.0, 1.0).unwrap();
        let ds = sample_gaussian_population(&prior, 50, 3, &seed()).unwrap();
        for t in &ds.true_params {
            assert_eq!(t.as_slice(), &[1.5, -2.0]);
        }
    }

    #[test]
    fn gaussian_sampling_is_deterministic() {
        let prior = GaussianPrior::new(vec![0.0], 1.0, 1.0).unwrap();
        let a = sample_gaussian_population(&prior, 2, 1, &seed()).unwrap();
        let b = sample_gaussian_population(&prior, 2, 1, &seed()).unwrap();
        assert_eq!(a, b);
        let c = sample_gaussian_population(&prior, 2, 1, &RngContract::new(1)).unwrap();
        assert_ne!(a.true_params, c.true_params);
    }

    #[test]
    fn gaussian_theta_mean_concentrates() {
        let m = 10_000;
        let prior = GaussianPrior::new(vec![0.0], 1.0, 1.0).unwrap();
        let ds = sample_gaussian_population(&prior, m, 1, &seed()).unwrap();
        let mean = ds.scalar_truths().iter().sum::<f64>() / m as f64;
        assert!(mean.abs() < 4.0 / (m as f64).sqrt(), "{mean}");
    }

    #[test]
    fn permuted_ids_give_same_clients() {
        let prior = GaussianPrior::new(vec![0.0, 1.0], 0.5, 2.0).unwrap();
        let forward: Vec<u64> = (0..20).collect();
        let reversed: Vec<u64> = (0..20).rev().collect();
        let a = sample_gaussian_clients(&prior, &forward, 4, &seed()).unwrap();
        let b = sample_gaussian_clients(&prior, &reversed, 4, &seed()).unwrap();
        for (i, c) in a.clients.iter().enumerate() {
            let j = 19 - i;
            assert_eq!(c, &b.clients[j]);
            assert_eq!(a.true_params[i], b.true_params[j]);
        }
    }

    #[test]
    fn three_spike_population_mean() {
        let ds = sample_bernoulli_population(&ScalarPrior::ThreeSpike, 30_000, 2, &seed()).unwrap();
        let mean = ds.scalar_truths().iter().sum::<f64>() / 30_000.0;
        assert!((mean - 0.5).abs() < 0.01);
    }

    #[test]
    fn certain_success_counts_every_trial() {
        let ds = sample_bernoulli_with_probs(&[1.0, 1.0, 0.0], 9, &seed()).unwrap();
        assert_eq!(ds.successes.unwrap(), vec![9, 9, 0]);
    }

    #[test]
    fn beta_population_sample_mean() {
        let (m, n) = (20_000, 10);
        let prior = ScalarPrior::beta(2.0, 2.0).unwrap();
        let ds = sample_bernoulli_population(&prior, m, n, &seed()).unwrap();
        let freqs: Vec<f64> = ds.successes.unwrap().iter().map(|&z| z as f64 / n as f64).collect();
        let mean = freqs.iter().sum::<f64>() / m as f64;
        let var = freqs.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (m as f64 - 1.0);
        assert!((mean - 0.5).abs() < 3.0 * (var / m as f64).sqrt());
    }

    #[test]
    fn invalid_bernoulli_prior_rejected() {
        let bad = ScalarPrior::Beta { alpha: -1.0, beta: 1.0 };
        assert!(sample_bernoulli_population(&bad, 3, 3, &seed()).is_err());
        assert!(sample_bernoulli_with_probs(&[1.2], 3, &seed()).is_err());
    }

    #[test]
    fn mixture_population_labels() {
        let one = DiscretePrior::new(vec![1.0], vec![vec![3.0, 4.0]], 5.0).unwrap();
        let ds = sample_mixture_population(&one, 20, 2, 1.0, &seed()).unwrap();
        assert!(ds.true_params.iter().all(|t| t.as_slice() == [3.0, 4.0]));

        let lopsided = DiscretePrior::new(vec![1.0, 0.0], vec![vec![0.0], vec![1.0]], 1.0).unwrap();
        let ds = sample_mixture_population(&lopsided, 100, 1, 1.0, &seed()).unwrap();
        assert!(ds.labels.unwrap().iter().all(|&l| l == 0));

        let half = DiscretePrior::new(vec![0.5, 0.5], vec![vec![0.0], vec![1.0]], 1.0).unwrap();
        let ds = sample_mixture_population(&half, 10_000, 1, 1.0, &seed()).unwrap();
        let frac = ds.labels.unwrap().iter().filter(|&&l| l == 1).count() as f64 / 10_000.0;
        assert!((frac - 0.5).abs() < 0.02);
    }

    #[test]
    fn noise_free_regression_is_exact() {
        let prior = GaussianPrior::new(vec![2.0], 0.0, 1.0).unwrap();
        let ds = sample_regression_with(&prior, 0.0, 5, 4, 1.0, &seed()).unwrap();
        for (c, t) in ds.clients.iter().zip(&ds.true_params) {
            let resid = c.y().unwrap() - c.x() * t;
            assert_eq!(resid.amax(), 0.0);
        }
    }

    #[test]
    fn regression_feature_variance() {
        let prior = GaussianPrior::new(vec![0.0; 3], 0.01, 0.05).unwrap();
        let ds = sample_regression_population(&prior, 2000, 10, 0.05f64.sqrt(), &seed()).unwrap();
        let all: Vec<f64> = ds.clients.iter().flat_map(|c| c.x().iter().copied()).collect();
        let var = all.iter().map(|v| v * v).sum::<f64>() / all.len() as f64;
        // sd of the estimate is 0.05 * sqrt(2 / 60000)
        assert!((var - 0.05).abs() < 4.0 * 0.05 * (2.0 / all.len() as f64).sqrt());
    }
}
