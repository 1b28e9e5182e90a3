//! Alternating gradient descent on personalized models and a single
//! Gaussian population prior, with clients holding local copies of the
//! population parameters that the server averages.

use std::f64::consts::PI;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::objective::{ols_local, CrossEntropy, LeastSquares, LocalObjective};
use super::TrajectoryRow;
use crate::dataset::ClientDataset;
use crate::error::{ensure, Error, Result};

/// How the data term enters the joint objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    /// Gaussian likelihood with a learned noise variance: the data loss is
    /// divided by `sigma_x_sq` and `n/2 log(2 pi sigma_x_sq)` is added.
    #[default]
    Gaussian,
    /// The data loss is already a negative log-likelihood.
    Fixed,
}

/// Parameters held constant during a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Freeze {
    #[serde(default)]
    pub mu: bool,
    #[serde(default)]
    pub sigma_theta: bool,
    #[serde(default)]
    pub sigma_x: bool,
}

impl Freeze {
    pub fn all() -> Self {
        Self { mu: true, sigma_theta: true, sigma_x: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GdConfig {
    pub eta: f64,
    pub iterations: usize,
    /// Server synchronization period in iterations.
    pub sync_every: usize,
    /// Multiplier applied to the step size after every iteration.
    pub lr_decay: f64,
    pub weight_decay: f64,
    pub variance_floor: f64,
    pub freeze: Freeze,
}

impl Default for GdConfig {
    fn default() -> Self {
        Self {
            eta: 0.01,
            iterations: 1000,
            sync_every: 1,
            lr_decay: 1.0,
            weight_decay: 0.0,
            variance_floor: 1e-8,
            freeze: Freeze::default(),
        }
    }
}

impl GdConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(self.eta > 0.0 && self.eta.is_finite(), || format!("eta must be > 0, got {}", self.eta))?;
        ensure(self.iterations >= 1, || "iterations must be >= 1".into())?;
        ensure(self.sync_every >= 1, || "sync_every must be >= 1".into())?;
        ensure(self.lr_decay > 0.0 && self.lr_decay <= 1.0, || {
            format!("lr_decay must lie in (0, 1], got {}", self.lr_decay)
        })?;
        ensure(self.weight_decay >= 0.0, || "weight_decay must be >= 0".into())?;
        ensure(self.variance_floor > 0.0, || "variance_floor must be > 0".into())
    }
}

/// Starting point of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GdInit {
    pub theta: Vec<DVector<f64>>,
    pub mu: DVector<f64>,
    pub sigma_theta_sq: f64,
    pub sigma_x_sq: f64,
}

impl GdInit {
    /// Every model and the mean start at zero.
    pub fn zeros(m: usize, d: usize, sigma_theta_sq: f64, sigma_x_sq: f64) -> Self {
        Self { theta: vec![DVector::zeros(d); m], mu: DVector::zeros(d), sigma_theta_sq, sigma_x_sq }
    }

    /// Every model starts at its client's least-squares fit, the mean at
    /// their average and the prior variance at their per-coordinate spread
    /// (at least `floor`).
    pub fn from_local_fits(clients: &[ClientDataset], sigma_x_sq: f64, floor: f64) -> Result<Self> {
        ensure(!clients.is_empty(), || "need at least one client".into())?;
        let theta = clients
            .par_iter()
            .map(|c| {
                let y = c.y().ok_or_else(|| Error::Input(format!("client {} has no real targets", c.client_id())))?;
                ols_local(c.x(), y)
            })
            .collect::<Result<Vec<_>>>()?;
        let d = theta[0].len();
        let mu = theta.iter().fold(DVector::zeros(d), |acc, t| acc + t) / theta.len() as f64;
        let spread = theta.iter().map(|t| (t - &mu).norm_squared()).sum::<f64>() / (theta.len() * d) as f64;
        Ok(Self { theta, mu, sigma_theta_sq: spread.max(floor), sigma_x_sq })
    }
}

/// Per-client models, their local copies of the population parameters,
/// and the server's copies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnState {
    pub round: usize,
    pub theta: Vec<DVector<f64>>,
    pub local_mu: Vec<DVector<f64>>,
    pub local_sigma_theta_sq: Vec<f64>,
    pub local_sigma_x_sq: Vec<f64>,
    pub mu: DVector<f64>,
    pub sigma_theta_sq: f64,
    pub sigma_x_sq: f64,
}

/// Value and gradients of one client's share of the joint objective.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientObjective {
    pub value: f64,
    pub theta: DVector<f64>,
    pub mu: DVector<f64>,
    pub sigma_theta_sq: f64,
    pub sigma_x_sq: f64,
}

/// `[n/2 log(2 pi s_x) + L(theta)/s_x] + d/2 log(2 pi s_t) + ||mu - theta||^2 / (2 s_t)`,
/// where the bracket reduces to `L(theta)` under [`NoiseModel::Fixed`].
pub fn client_objective<O: LocalObjective + ?Sized>(
    objective: &O,
    theta: &DVector<f64>,
    mu: &DVector<f64>,
    sigma_theta_sq: f64,
    sigma_x_sq: f64,
    noise: NoiseModel,
) -> ClientObjective {
    let (loss, loss_grad) = objective.loss_grad(theta);
    let d = theta.len() as f64;
    let n = objective.n() as f64;
    let diff = theta - mu;
    let dist = diff.norm_squared();
    let (data, data_grad, sx_grad) = match noise {
        NoiseModel::Gaussian => (
            0.5 * n * (2.0 * PI * sigma_x_sq).ln() + loss / sigma_x_sq,
            loss_grad / sigma_x_sq,
            n / (2.0 * sigma_x_sq) - loss / (sigma_x_sq * sigma_x_sq),
        ),
        NoiseModel::Fixed => (loss, loss_grad, 0.0),
    };
    ClientObjective {
        value: data + 0.5 * d * (2.0 * PI * sigma_theta_sq).ln() + dist / (2.0 * sigma_theta_sq),
        theta: data_grad + &diff / sigma_theta_sq,
        mu: -diff / sigma_theta_sq,
        sigma_theta_sq: d / (2.0 * sigma_theta_sq) - dist / (2.0 * sigma_theta_sq * sigma_theta_sq),
        sigma_x_sq: sx_grad,
    }
}

/// Result of an alternating run.
#[derive(Clone, Debug, PartialEq)]
pub struct GdRun {
    pub state: LearnState,
    /// Joint objective at the start of each iteration, evaluated with each
    /// client's local copies.
    pub objective_history: Vec<f64>,
    /// Server quantities after every synchronization.
    pub trajectory: Vec<TrajectoryRow>,
}

/// Multiplicative step on a variance: gradient descent on `log s` using the
/// chain-rule gradient `g * s`, then the floor.
fn variance_step(s: f64, grad: f64, eta: f64, floor: f64) -> f64 {
    (s * (-eta * grad * s).exp()).max(floor)
}

/// Linear regression with learned mean and variances.
pub fn linreg_gd_run(clients: &[ClientDataset], config: &GdConfig, init: GdInit) -> Result<GdRun> {
    let objectives: Vec<LeastSquares> = clients.iter().map(LeastSquares::new).collect::<Result<_>>()?;
    alternating_gd_run(&objectives, config, init, NoiseModel::Gaussian)
}

/// Logistic regression with learned mean and prior variance.
pub fn logreg_gd_run(clients: &[ClientDataset], config: &GdConfig, init: GdInit) -> Result<GdRun> {
    let objectives: Vec<CrossEntropy> = clients.iter().map(CrossEntropy::new).collect::<Result<_>>()?;
    alternating_gd_run(&objectives, config, init, NoiseModel::Fixed)
}

/// Each iteration, every client takes one step on its model and on its
/// local copies of `mu`, `sigma_theta_sq` and (Gaussian noise only)
/// `sigma_x_sq`, all gradients evaluated at the iteration's starting
/// point. Every `sync_every` iterations the server replaces its copies
/// with the client averages and broadcasts them.
pub fn alternating_gd_run<O: LocalObjective>(
    objectives: &[O],
    config: &GdConfig,
    init: GdInit,
    noise: NoiseModel,
) -> Result<GdRun> {
    config.validate()?;
    let m = objectives.len();
    ensure(m >= 1, || "need at least one client".into())?;
    ensure(init.theta.len() == m, || format!("{} initial models for {m} clients", init.theta.len()))?;
    let d = init.mu.len();
    for (o, t) in objectives.iter().zip(&init.theta) {
        if o.dim() != d || t.len() != d {
            return Err(Error::Dimension { expected: d, got: if o.dim() != d { o.dim() } else { t.len() } });
        }
    }
    ensure(init.sigma_theta_sq > 0.0 && init.sigma_x_sq > 0.0, || "initial variances must be > 0".into())?;
    let floor = config.variance_floor;
    let fixed_noise = noise == NoiseModel::Fixed;

    let mut state = LearnState {
        round: 0,
        local_mu: vec![init.mu.clone(); m],
        local_sigma_theta_sq: vec![init.sigma_theta_sq; m],
        local_sigma_x_sq: vec![init.sigma_x_sq; m],
        theta: init.theta,
        mu: init.mu,
        sigma_theta_sq: init.sigma_theta_sq,
        sigma_x_sq: init.sigma_x_sq,
    };
    let mut history = Vec::with_capacity(config.iterations);
    let mut trajectory = Vec::new();
    let mut eta = config.eta;

    for t in 1..=config.iterations {
        if (t - 1) % config.sync_every == 0 {
            state.local_mu.iter_mut().for_each(|v| v.copy_from(&state.mu));
            state.local_sigma_theta_sq.iter_mut().for_each(|v| *v = state.sigma_theta_sq);
            state.local_sigma_x_sq.iter_mut().for_each(|v| *v = state.sigma_x_sq);
        }
        let values: Vec<f64> = state
            .theta
            .par_iter_mut()
            .zip(state.local_mu.par_iter_mut())
            .zip(state.local_sigma_theta_sq.par_iter_mut())
            .zip(state.local_sigma_x_sq.par_iter_mut())
            .zip(objectives.par_iter())
            .map(|((((theta, mu), st), sx), obj)| {
                let g = client_objective(obj, theta, mu, *st, *sx, noise);
                let mut step = g.theta;
                if config.weight_decay > 0.0 {
                    step.axpy(config.weight_decay, theta, 1.0);
                }
                theta.axpy(-eta, &step, 1.0);
                if !config.freeze.mu {
                    mu.axpy(-eta, &g.mu, 1.0);
                }
                if !config.freeze.sigma_theta {
                    *st = variance_step(*st, g.sigma_theta_sq, eta, floor);
                }
                if !config.freeze.sigma_x && !fixed_noise {
                    *sx = variance_step(*sx, g.sigma_x_sq, eta, floor);
                }
                g.value
            })
            .collect();
        let total: f64 = values.iter().sum();
        let blown = !total.is_finite() || state.theta.iter().any(|th| th.iter().any(|v| !v.is_finite()));
        if blown {
            return Err(Error::Divergence {
                iteration: t,
                reason: format!("objective {total} with step size {eta}; try a smaller eta"),
            });
        }
        history.push(total);

        if t % config.sync_every == 0 || t == config.iterations {
            let inv = 1.0 / m as f64;
            if !config.freeze.mu {
                let mut sum = DVector::zeros(d);
                for v in &state.local_mu {
                    sum += v;
                }
                state.mu = sum * inv;
            }
            if !config.freeze.sigma_theta {
                state.sigma_theta_sq = state.local_sigma_theta_sq.iter().sum::<f64>() * inv;
            }
            if !config.freeze.sigma_x && !fixed_noise {
                state.sigma_x_sq = state.local_sigma_x_sq.iter().sum::<f64>() * inv;
            }
            state.round += 1;
            let server = |quantity: &str, value: f64| TrajectoryRow {
                round: state.round,
                client: None,
                quantity: quantity.into(),
                value,
            };
            trajectory.push(server("objective", total));
            trajectory.push(server("mu_norm", state.mu.norm()));
            trajectory.push(server("sigma_theta_sq", state.sigma_theta_sq));
            if !fixed_noise {
                trajectory.push(server("sigma_x_sq", state.sigma_x_sq));
            }
        }
        eta *= config.lr_decay;
    }
    Ok(GdRun { state, objective_history: history, trajectory })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::objective::linreg_closed_form;
    use crate::prior::GaussianPrior;
    use crate::rng::{Purpose, RngContract};
    use crate::sampling::{sample_logistic_population, sample_regression_population};
    use crate::testutil::fd_check;
    use nalgebra::DMatrix;
    use rand::Rng;

    fn regression(m: usize, n: usize, d: usize, seed: u64) -> (GaussianPrior, crate::SyntheticDataset) {
        let prior = GaussianPrior::new(vec![0.3; d], 0.1, 0.2).unwrap();
        let ds = sample_regression_population(&prior, m, n, 1.0, &RngContract::new(seed)).unwrap();
        (prior, ds)
    }

    #[test]
    fn local_fit_init_summarizes_clients() {
        let (_, ds) = regression(40, 30, 3, 9);
        let init = GdInit::from_local_fits(&ds.clients, 0.5, 1e-6).unwrap();
        let mean = init.theta.iter().fold(DVector::zeros(3), |a, t| a + t) / 40.0;
        assert!((&init.mu - mean).norm() < 1e-12);
        // OLS spread overstates the prior variance 0.1 by the estimation noise.
        assert!(init.sigma_theta_sq > 0.05 && init.sigma_theta_sq < 0.3, "{}", init.sigma_theta_sq);
        assert_eq!(init.sigma_x_sq, 0.5);
        let bare = ClientDataset::observations(0, DMatrix::zeros(2, 3)).unwrap();
        assert!(GdInit::from_local_fits(&[bare], 0.5, 1e-6).is_err());
    }

    #[test]
    fn frozen_globals_reach_closed_form() {
        let (prior, ds) = regression(1, 20, 5, 1);
        let config = GdConfig { eta: 0.01, iterations: 5000, freeze: Freeze::all(), ..GdConfig::default() };
        let init = GdInit {
            theta: vec![DVector::zeros(5)],
            mu: prior.mu_vector(),
            sigma_theta_sq: 0.1,
            sigma_x_sq: 0.2,
        };
        let run = linreg_gd_run(&ds.clients, &config, init).unwrap();
        let c = &ds.clients[0];
        let exact = linreg_closed_form(c.x(), c.y().unwrap(), &prior.mu_vector(), 0.1, 0.2).unwrap();
        assert!((&run.state.theta[0] - exact).norm() < 1e-4);
    }

    #[test]
    fn client_gradients_match_finite_differences() {
        let mut r = RngContract::new(9).stream(0, 0, Purpose::Custom(1));
        for point in 0..20 {
            let x = DMatrix::from_fn(7, 3, |_, _| r.random_range(-1.0..1.0));
            let y = DVector::from_fn(7, |_, _| r.random_range(-1.0..1.0));
            let c = ClientDataset::regression(point, x, y).unwrap();
            let obj = LeastSquares::new(&c).unwrap();
            let theta = DVector::from_fn(3, |_, _| r.random_range(-1.0..1.0));
            let mu = DVector::from_fn(3, |_, _| r.random_range(-1.0..1.0));
            let (st, sx) = (r.random_range(0.1..2.0), r.random_range(0.1..2.0));
            let g = client_objective(&obj, &theta, &mu, st, sx, NoiseModel::Gaussian);
            let val = |t: &DVector<f64>, m: &DVector<f64>, a: f64, b: f64| {
                client_objective(&obj, t, m, a, b, NoiseModel::Gaussian).value
            };
            assert!(fd_check(|t| val(t, &mu, st, sx), &theta, &g.theta) <= 1e-5);
            assert!(fd_check(|m| val(&theta, m, st, sx), &mu, &g.mu) <= 1e-5);
            let s = DVector::from_element(1, st);
            assert!(fd_check(|v| val(&theta, &mu, v[0], sx), &s, &DVector::from_element(1, g.sigma_theta_sq)) <= 1e-5);
            let s = DVector::from_element(1, sx);
            assert!(fd_check(|v| val(&theta, &mu, st, v[0]), &s, &DVector::from_element(1, g.sigma_x_sq)) <= 1e-5);
        }
    }

    #[test]
    fn logistic_gradients_match_finite_differences() {
        let prior = GaussianPrior::new(vec![0.5, -0.5, 0.2], 0.5, 1.0).unwrap();
        let ds = sample_logistic_population(&prior, 20, 15, 1.0, &RngContract::new(2)).unwrap();
        let mut r = RngContract::new(3).stream(0, 0, Purpose::Custom(2));
        for c in &ds.clients {
            let obj = CrossEntropy::new(c).unwrap();
            let theta = DVector::from_fn(3, |_, _| r.random_range(-2.0..2.0));
            let mu = DVector::from_fn(3, |_, _| r.random_range(-1.0..1.0));
            let st = r.random_range(0.1..2.0);
            let g = client_objective(&obj, &theta, &mu, st, 1.0, NoiseModel::Fixed);
            let val = |t: &DVector<f64>| client_objective(&obj, t, &mu, st, 1.0, NoiseModel::Fixed).value;
            assert!(fd_check(val, &theta, &g.theta) <= 1e-5);
            assert_eq!(g.sigma_x_sq, 0.0);
        }
    }

    #[test]
    fn prior_pull_vanishes_at_the_mean() {
        let c = ClientDataset::classification(0, DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 3.0, 0.5]), vec![1, 0])
            .unwrap();
        let obj = CrossEntropy::new(&c).unwrap();
        let at = DVector::from_column_slice(&[0.3, -0.7]);
        let g = client_objective(&obj, &at, &at, 0.5, 1.0, NoiseModel::Fixed);
        assert_eq!(g.theta, obj.loss_grad(&at).1);
        assert_eq!(g.mu.norm(), 0.0);
    }

    #[test]
    fn objective_non_increasing_for_small_steps() {
        let (_, ds) = regression(30, 8, 4, 4);
        let config = GdConfig { eta: 1e-3, iterations: 100, ..GdConfig::default() };
        let run = linreg_gd_run(&ds.clients, &config, GdInit::zeros(30, 4, 1.0, 1.0)).unwrap();
        for w in run.objective_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * w[0].abs(), "{} > {}", w[1], w[0]);
        }
    }

    #[test]
    fn server_holds_means_of_uploads() {
        let (_, ds) = regression(12, 6, 3, 5);
        let config = GdConfig { eta: 0.005, iterations: 7, sync_every: 3, ..GdConfig::default() };
        let run = linreg_gd_run(&ds.clients, &config, GdInit::zeros(12, 3, 0.5, 0.5)).unwrap();
        let s = &run.state;
        let mut sum = DVector::zeros(3);
        for v in &s.local_mu {
            sum += v;
        }
        assert_eq!(s.mu, sum * (1.0 / 12.0));
        assert_eq!(s.sigma_theta_sq, s.local_sigma_theta_sq.iter().sum::<f64>() * (1.0 / 12.0));
        assert_eq!(s.round, 3);
        let again = linreg_gd_run(&ds.clients, &config, GdInit::zeros(12, 3, 0.5, 0.5)).unwrap();
        assert_eq!(run, again);
    }

    #[test]
    fn variances_stay_positive() {
        // A perfect fit drives sigma_x_sq towards zero.
        let x = DMatrix::identity(3, 3);
        let c = ClientDataset::regression(0, x, DVector::from_element(3, 1.0)).unwrap();
        let config = GdConfig { eta: 0.5, iterations: 400, ..GdConfig::default() };
        let init = GdInit { theta: vec![DVector::from_element(3, 1.0)], mu: DVector::from_element(3, 1.0), sigma_theta_sq: 1.0, sigma_x_sq: 1.0 };
        let run = linreg_gd_run(&[c], &config, init).unwrap();
        assert!(run.state.sigma_x_sq >= 1e-8 && run.state.sigma_theta_sq >= 1e-8);
    }

    #[test]
    fn zero_data_client_follows_prior() {
        let c = ClientDataset::regression(0, DMatrix::zeros(0, 2), DVector::zeros(0)).unwrap();
        let config = GdConfig { eta: 0.1, iterations: 1, freeze: Freeze::all(), ..GdConfig::default() };
        let init = GdInit { theta: vec![DVector::zeros(2)], mu: DVector::from_element(2, 1.0), sigma_theta_sq: 1.0, sigma_x_sq: 1.0 };
        let run = linreg_gd_run(&[c], &config, init).unwrap();
        assert!((run.state.theta[0][0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn huge_step_reports_divergence() {
        let (_, ds) = regression(5, 10, 3, 6);
        let config = GdConfig { eta: 50.0, iterations: 500, ..GdConfig::default() };
        let err = linreg_gd_run(&ds.clients, &config, GdInit::zeros(5, 3, 1.0, 1.0)).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn personalized_logistic_beats_local_on_average() {
        use crate::learn::objective::accuracy;
        use crate::sampling::sample_logistic_holdout;
        let (m, n, d) = (20, 20, 5);
        let mut wins = 0.0;
        for seed in 0..5 {
            let prior = GaussianPrior::new(vec![1.5, -1.0, 0.5, 1.0, -0.5], 0.05, 1.0).unwrap();
            let rng = RngContract::new(seed);
            let ds = sample_logistic_population(&prior, m, n, 1.0, &rng).unwrap();
            let test = sample_logistic_holdout(&ds, 200, 1.0, &rng).unwrap();
            let config = GdConfig { eta: 0.05, iterations: 300, ..GdConfig::default() };
            let pers = logreg_gd_run(&ds.clients, &config, GdInit::zeros(m, d, 1.0, 1.0)).unwrap();
            let local_cfg = GdConfig { freeze: Freeze::all(), ..config.clone() };
            let local = logreg_gd_run(&ds.clients, &local_cfg, GdInit::zeros(m, d, 1e6, 1.0)).unwrap();
            let acc = |th: &[DVector<f64>]| {
                test.iter().zip(th).map(|(c, t)| accuracy(c, t).unwrap()).sum::<f64>() / m as f64
            };
            wins += acc(&pers.state.theta) - acc(&local.state.theta);
        }
        assert!(wins >= 0.0, "{wins}");
    }
}
