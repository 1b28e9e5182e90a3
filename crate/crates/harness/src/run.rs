//! Runs an experiment config across its seeds.

use std::time::Instant;

use fedbayes_core::adaped::{adaped_run, cluster_tasks, compare_methods, dp_adaped_run, mean_test_accuracy, TaskSpec};
use fedbayes_core::bern_est::{known_prior_bernoulli, personalized_bernoulli, private_personalized_bernoulli};
use fedbayes_core::gauss_est::{
    clip_radius_b, constrained_personalized_gaussian, personalized_gaussian, shrinkage_weight,
};
use fedbayes_core::learn::{
    accuracy, fedavg_baseline, gmm_prior_learning, linreg_closed_form, linreg_gd_run, local_gd, logreg_gd_run, ols_local,
    CrossEntropy, FedAvgConfig, GdInit, LeastSquares, Scaled, TrajectoryRow,
};
use fedbayes_core::metrics::{evaluate_mse_scalar, MseEstimate};
use fedbayes_core::mixture_est::{alt_min_estimation, match_centers, posterior_mean_mixture, posterior_weights};
use fedbayes_core::presets::LinregPreset;
use fedbayes_core::privacy::{rdp_to_dp, AdapedAccounting, DpTarget, MechanismSpec, RdpCurve};
use fedbayes_core::sampling::{
    sample_bernoulli_population, sample_gaussian_population, sample_logistic_holdout, sample_logistic_population,
    sample_mixture_population, sample_regression_population, sample_regression_with,
};
use fedbayes_core::{ClientDataset, DiscretePrior, GaussianPrior, RngContract, ScalarPrior, SyntheticDataset};
use nalgebra::DVector;
use rayon::prelude::*;

pub use fedbayes_core::metrics::evaluate_mse;

use crate::config::{
    AccountantParams, AdapedParams, BernParams, ChannelSpec, DpAdapedParams, Experiment, ExperimentConfig, GaussParams,
    GmmLearnParams, LinregParams, LogregParams, MixtureParams, PanelSource,
};
use crate::error::{Context, HarnessError, Result};
use crate::panel::{load_binary_panel, panel_cv, synthetic_panel, BinaryPanel, PanelCvResult};
use crate::report::{aggregate, ExperimentReport, Measurement, PrivacyBudget, SeedOutcome};

impl From<MseEstimate> for Measurement {
    fn from(e: MseEstimate) -> Self {
        Measurement::with_stderr(e.mse, e.stderr)
    }
}

/// Validates the config, runs every seed in parallel and aggregates.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let start = Instant::now();
    // A panel read from disk is the same for every seed.
    let shared_panel = match &config.experiment {
        Experiment::PanelCv(p) => match &p.panel {
            PanelSource::File { path } => Some(load_binary_panel(path)?),
            PanelSource::Synthetic { .. } => None,
        },
        _ => None,
    };
    let outcomes = config
        .seeds
        .par_iter()
        .map(|&seed| run_seed(&config.experiment, seed, shared_panel.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(config, &outcomes, start.elapsed().as_secs_f64()))
}

/// Outcome of one seed.
pub fn run_seed(experiment: &Experiment, seed: u64, panel: Option<&BinaryPanel>) -> Result<SeedOutcome> {
    let rng = RngContract::new(seed);
    match experiment {
        Experiment::Gauss(p) => gauss(p, &rng),
        Experiment::Bern(p) => bern(p, &rng),
        Experiment::Mixture(p) => mixture(p, &rng),
        Experiment::Linreg(p) => linreg(p, &rng),
        Experiment::Logreg(p) => logreg(p, &rng),
        Experiment::GmmLearn(p) => gmm_learn(p, &rng),
        Experiment::Adaped(p) => adaped(p, seed),
        Experiment::DpAdaped(p) => dp_adaped(p, seed),
        Experiment::Accountant(p) => accountant(p),
        Experiment::PanelCv(p) => {
            let owned;
            let panel = match (&p.panel, panel) {
                (_, Some(shared)) => shared,
                (PanelSource::Synthetic { units, rounds, prior }, None) => {
                    owned = synthetic_panel(*units, *rounds, prior, &rng)?;
                    &owned
                }
                (PanelSource::File { path }, None) => {
                    owned = load_binary_panel(path)?;
                    &owned
                }
            };
            Ok(panel_outcome(&panel_cv(panel)?))
        }
    }
}

fn sample_means(clients: &[ClientDataset]) -> Vec<DVector<f64>> {
    clients.iter().map(ClientDataset::sample_mean).collect()
}

fn average(vectors: &[DVector<f64>]) -> DVector<f64> {
    vectors.iter().fold(DVector::zeros(vectors[0].len()), |acc, v| acc + v) / vectors.len() as f64
}

/// Every client gets the same estimate.
fn broadcast(v: DVector<f64>, m: usize) -> Vec<DVector<f64>> {
    vec![v; m]
}

fn mse(estimates: &[DVector<f64>], ds: &SyntheticDataset, what: &str) -> Result<Measurement> {
    Ok(evaluate_mse(estimates, &ds.true_params).context(what)?.into())
}

fn gauss(p: &GaussParams, rng: &RngContract) -> Result<SeedOutcome> {
    let mu = p.mu.clone().unwrap_or_else(|| vec![0.0; p.d]);
    let radius = mu.iter().fold(0.0f64, |r, v| r.max(v.abs()));
    let prior = GaussianPrior::new(mu, p.sigma_theta_sq, p.sigma_x_sq).context("building prior")?;
    let ds = sample_gaussian_population(&prior, p.m, p.n, rng).context("sampling population")?;
    let weight = shrinkage_weight(p.sigma_theta_sq, p.sigma_x_sq, p.n, 0.0, p.m).context("shrinkage weight")?;
    let plain = personalized_gaussian(&ds, weight).context("personalized estimate")?;
    let means = sample_means(&ds.clients);
    let mut out = SeedOutcome::default();
    out.push("mse", "personalized", plain.empirical.expect("always measured").into());
    out.push("mse", "local", mse(&means, &ds, "local estimate")?);
    out.push("mse", "global", mse(&broadcast(average(&means), p.m), &ds, "global estimate")?);
    out.push("weight", "personalized", Measurement::exact(weight.value()));
    if let Some(t) = plain.theoretical_mse {
        out.push("theoretical_mse", "personalized", Measurement::exact(t));
    }
    let bound = p
        .bound
        .unwrap_or_else(|| clip_radius_b(radius, p.sigma_theta_sq.sqrt(), p.sigma_x_sq.sqrt(), p.n, p.m));
    for channel in &p.channels {
        let mechanism = match *channel {
            ChannelSpec::Quantizer { bits } => MechanismSpec::Quantizer { bits, range: bound },
            ChannelSpec::GaussianLdp { epsilon0, delta } => MechanismSpec::GaussianLdp { epsilon0, delta, range: bound },
        };
        let label = channel.label();
        let report = constrained_personalized_gaussian(&ds, p.sigma_theta_sq, p.sigma_x_sq, mechanism, bound, rng)
            .context(&format!("channel {label}"))?;
        out.push("mse", &label, report.empirical.expect("always measured").into());
        out.push("weight", &label, Measurement::exact(report.weight.value()));
        if let Some(t) = report.theoretical_mse {
            out.push("theoretical_mse", &label, Measurement::exact(t));
        }
        if let Some(proj) = report.projection {
            out.push("projected_clients", &label, Measurement::exact(proj.projected_clients as f64));
        }
    }
    Ok(out)
}

fn bern(p: &BernParams, rng: &RngContract) -> Result<SeedOutcome> {
    let ds = sample_bernoulli_population(&p.prior, p.m, p.n, rng).context("sampling population")?;
    let report = personalized_bernoulli(&ds).context("personalized estimate")?;
    let means = ds.scalar_means();
    let pooled = means.iter().sum::<f64>() / means.len() as f64;
    let global = evaluate_mse_scalar(&vec![pooled; means.len()], &ds.scalar_truths()).context("global estimate")?;
    let mut out = SeedOutcome::default();
    out.push("mse", "personalized", report.empirical.into());
    out.push("mse", "local", report.local.into());
    out.push("mse", "global", global.into());
    if let ScalarPrior::Beta { alpha, beta } = p.prior {
        let known = known_prior_bernoulli(&ds, alpha, beta).context("known-prior estimate")?;
        out.push("mse", "known_prior", known.empirical.into());
    }
    if let Some(eps) = p.epsilon0 {
        let private = private_personalized_bernoulli(&ds, eps, rng).context("private estimate")?;
        out.push("mse", "private", private.empirical.into());
    }
    Ok(out)
}

fn mixture(p: &MixtureParams, rng: &RngContract) -> Result<SeedOutcome> {
    let radius = p.centers.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max);
    let prior = DiscretePrior::new(p.probs.clone(), p.centers.clone(), radius).context("building prior")?;
    let ds = sample_mixture_population(&prior, p.m, p.n, p.sigma_x_sq, rng).context("sampling population")?;
    let alt = alt_min_estimation(&ds.clients, prior.k(), p.rounds, p.sigma_x_sq, rng, None).context("alternating minimization")?;
    let truth = prior.center_vectors();
    let oracle = ds
        .clients
        .par_iter()
        .map(|c| Ok(posterior_mean_mixture(&posterior_weights(c, &prior, p.sigma_x_sq)?, &truth)))
        .collect::<fedbayes_core::Result<Vec<_>>>()
        .context("known-prior estimate")?;
    let means = sample_means(&ds.clients);
    let mut out = SeedOutcome::default();
    out.push("mse", "personalized", mse(&alt.estimates, &ds, "personalized estimate")?);
    out.push("mse", "local", mse(&means, &ds, "local estimate")?);
    out.push("mse", "global", mse(&broadcast(average(&means), p.m), &ds, "global estimate")?);
    out.push("mse", "known_prior", mse(&oracle, &ds, "known-prior estimate")?);
    let found = alt.final_centers();
    let matching = match_centers(found, &truth).context("matching centers")?;
    let center_error =
        found.iter().zip(&matching).map(|(c, &t)| (c - &truth[t]).norm_squared()).sum::<f64>() / found.len() as f64;
    out.push("center_error", "personalized", Measurement::exact(center_error));
    out.trajectory = alt.trajectory.iter().flat_map(snapshot_rows).collect();
    Ok(out)
}

/// Inertia, then every center's coordinates and probability.
fn snapshot_rows(s: &fedbayes_core::mixture_est::ClusterSnapshot) -> Vec<TrajectoryRow> {
    let row = |quantity: String, value: f64| TrajectoryRow { round: s.round, client: None, quantity, value };
    let mut rows = vec![row("inertia".into(), s.inertia)];
    for (l, (center, &prob)) in s.centers.iter().zip(&s.probs).enumerate() {
        rows.extend(center.iter().enumerate().map(|(j, &v)| row(format!("center_{l}_x{j}"), v)));
        rows.push(row(format!("center_{l}_prob"), prob));
    }
    rows
}

fn local_fits(clients: &[ClientDataset]) -> Result<Vec<DVector<f64>>> {
    clients
        .par_iter()
        .map(|c| ols_local(c.x(), c.y().expect("regression clients have targets")))
        .collect::<fedbayes_core::Result<_>>()
        .context("least-squares fits")
}

fn linreg(p: &LinregParams, rng: &RngContract) -> Result<SeedOutcome> {
    let pop = p.population;
    let prior = pop.prior(p.d, rng).context("building prior")?;
    let ds = sample_regression_population(&prior, p.m, p.n, pop.feature_sd(), rng).context("sampling population")?;
    let init = GdInit::from_local_fits(&ds.clients, p.init_sigma_x_sq, p.gd.variance_floor).context("initializing")?;
    let run = linreg_gd_run(&ds.clients, &p.gd, init).context("alternating gradient descent")?;
    let ols = local_fits(&ds.clients)?;
    let mu = prior.mu_vector();
    let oracle = ds
        .clients
        .par_iter()
        .map(|c| linreg_closed_form(c.x(), c.y().expect("regression clients have targets"), &mu, pop.sigma_theta_sq, pop.sigma_x_sq))
        .collect::<fedbayes_core::Result<Vec<_>>>()
        .context("closed-form estimate")?;
    let mut out = SeedOutcome::default();
    out.push("mse", "personalized", mse(&run.state.theta, &ds, "learned models")?);
    out.push("mse", "local", mse(&ols, &ds, "local fits")?);
    out.push("mse", "global", mse(&broadcast(run.state.mu.clone(), p.m), &ds, "learned mean")?);
    out.push("mse", "known_prior", mse(&oracle, &ds, "closed-form estimate")?);
    out.push("sigma_theta_sq", "personalized", Measurement::exact(run.state.sigma_theta_sq));
    out.push("sigma_x_sq", "personalized", Measurement::exact(run.state.sigma_x_sq));
    out.trajectory = run.trajectory;
    Ok(out)
}

fn mean_accuracy(clients: &[ClientDataset], params: &[DVector<f64>]) -> Result<f64> {
    let scores = clients
        .par_iter()
        .zip(params)
        .map(|(c, t)| accuracy(c, t))
        .collect::<fedbayes_core::Result<Vec<_>>>()
        .context("scoring held-out samples")?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

fn logreg(p: &LogregParams, rng: &RngContract) -> Result<SeedOutcome> {
    // Only the mean draw is used; logistic data has no noise variance.
    let mean_draw = LinregPreset { sigma_theta_sq: p.sigma_theta_sq, sigma_x_sq: 1.0, feature_var: 1.0, mean_sd: p.mean_sd };
    let prior = mean_draw.prior(p.d, rng).context("building prior")?;
    let ds = sample_logistic_population(&prior, p.m, p.n, p.feature_sd, rng).context("sampling population")?;
    let test = sample_logistic_holdout(&ds, p.test_samples, p.feature_sd, rng).context("sampling held-out data")?;
    let init = GdInit::zeros(p.m, p.d, p.init_sigma_theta_sq, 1.0);
    let run = logreg_gd_run(&ds.clients, &p.gd, init).context("alternating gradient descent")?;
    let objectives: Vec<CrossEntropy> =
        ds.clients.iter().map(CrossEntropy::new).collect::<fedbayes_core::Result<_>>().context("building losses")?;
    let local = objectives
        .par_iter()
        .map(|o| local_gd(o, DVector::zeros(p.d), p.gd.eta, p.gd.iterations, p.gd.weight_decay))
        .collect::<fedbayes_core::Result<Vec<_>>>()
        .context("local training")?;
    let fed_config = FedAvgConfig {
        eta: p.gd.eta,
        rounds: p.gd.iterations,
        local_steps: 1,
        lr_decay: p.gd.lr_decay,
        weight_decay: p.gd.weight_decay,
    };
    let global = broadcast(fedavg_baseline(&objectives, &fed_config, DVector::zeros(p.d)).context("FedAvg")?.global, p.m);
    let mut out = SeedOutcome::default();
    for (name, params) in [("personalized", &run.state.theta), ("local", &local), ("global", &global)] {
        out.push("mse", name, mse(params, &ds, name)?);
        out.push("accuracy", name, Measurement::exact(mean_accuracy(&test, params)?));
    }
    out.trajectory = run.trajectory;
    Ok(out)
}

fn gmm_learn(p: &GmmLearnParams, rng: &RngContract) -> Result<SeedOutcome> {
    let ds = sample_regression_with(&p.prior, p.sigma_x_sq, p.m, p.n, p.feature_sd, rng).context("sampling population")?;
    let objectives: Vec<Scaled<LeastSquares>> = ds
        .clients
        .iter()
        .map(|c| Ok(Scaled { inner: LeastSquares::new(c)?, factor: 1.0 / p.sigma_x_sq }))
        .collect::<fedbayes_core::Result<_>>()
        .context("building losses")?;
    let ols = local_fits(&ds.clients)?;
    let run = gmm_prior_learning(&objectives, p.prior.k(), &p.gmm, ols.clone(), rng).context("mixture prior learning")?;
    let mut out = SeedOutcome::default();
    out.push("mse", "personalized", mse(&run.theta, &ds, "learned models")?);
    out.push("mse", "local", mse(&ols, &ds, "local fits")?);
    out.push("mse", "global", mse(&broadcast(average(&ols), p.m), &ds, "pooled mean")?);
    out.trajectory = run
        .fits
        .iter()
        .enumerate()
        .flat_map(|(round, fit)| {
            fit.component_sds().iter().enumerate().map(move |(l, &sd)| TrajectoryRow {
                round,
                client: None,
                quantity: format!("component_sd_{l}"),
                value: sd,
            })
        })
        .collect();
    Ok(out)
}

/// Tasks come from the seed itself, training randomness from a derived
/// contract so the two never share streams.
fn task_rngs(spec: &TaskSpec, seed: u64) -> Result<(fedbayes_core::adaped::TaskSet, RngContract)> {
    let base = RngContract::new(seed);
    Ok((cluster_tasks(spec, &base).context("sampling tasks")?, base.derive(1)))
}

fn adaped(p: &AdapedParams, seed: u64) -> Result<SeedOutcome> {
    let (tasks, rng) = task_rngs(&p.tasks, seed)?;
    let (cmp, run) = compare_methods(&tasks, &p.adaped, &p.fedavg, &rng).context("training")?;
    let mut out = SeedOutcome::default();
    out.push("accuracy", "adaped", Measurement::exact(cmp.adaped));
    out.push("accuracy", "local", Measurement::exact(cmp.local_only));
    out.push("accuracy", "fedavg", Measurement::exact(cmp.fedavg));
    out.push("mean_psi", "adaped", Measurement::exact(cmp.mean_psi));
    out.push("server_psi", "adaped", Measurement::exact(cmp.server_psi));
    out.trajectory = run.trajectory;
    Ok(out)
}

fn budget(accounting: &AdapedAccounting, curve: &RdpCurve, delta: f64) -> Result<PrivacyBudget> {
    let (rounds, rounds_rounded_up) = accounting.rounds();
    let (epsilon, alpha_star) = match curve {
        RdpCurve::Unbounded => (None, None),
        _ => {
            let conv = rdp_to_dp(curve, DpTarget::Delta(delta)).context("converting to (epsilon, delta)")?;
            (Some(conv.epsilon), Some(conv.alpha_star))
        }
    };
    let rdp_coefficient = match curve {
        RdpCurve::Linear { coef } => Some(*coef),
        _ => None,
    };
    Ok(PrivacyBudget { epsilon, delta, alpha_star, rdp_coefficient, rounds, rounds_rounded_up })
}

fn dp_adaped(p: &DpAdapedParams, seed: u64) -> Result<SeedOutcome> {
    let (tasks, rng) = task_rngs(&p.tasks, seed)?;
    let train = &tasks.train.clients;
    let private = dp_adaped_run(train, &p.adaped, &p.dp, &rng).context("private training")?;
    let clean = adaped_run(train, &p.adaped, &rng).context("non-private training")?;
    let model = &p.adaped.model;
    let mut out = SeedOutcome::default();
    let private_acc = mean_test_accuracy(model, &private.run.state.theta, &tasks.test).context("scoring")?;
    let clean_acc = mean_test_accuracy(model, &clean.state.theta, &tasks.test).context("scoring")?;
    out.push("accuracy", "dp_adaped", Measurement::exact(private_acc));
    out.push("accuracy", "adaped", Measurement::exact(clean_acc));
    out.push("mean_psi", "dp_adaped", Measurement::exact(private.run.mean_local_psi()));
    out.push("mean_psi", "adaped", Measurement::exact(clean.mean_local_psi()));
    out.push("max_clipped_norm", "dp_adaped", Measurement::exact(private.max_clipped_norm));
    out.privacy = Some(budget(&private.accounting, &private.curve, p.delta)?);
    out.trajectory = private.run.trajectory;
    Ok(out)
}

fn accountant(p: &AccountantParams) -> Result<SeedOutcome> {
    let curve = p.accounting.curve().context("privacy curve")?;
    let b = budget(&p.accounting, &curve, p.delta)?;
    let mut out = SeedOutcome::default();
    if let Some(e) = b.epsilon {
        out.push("epsilon", "accountant", Measurement::exact(e));
    }
    if let Some(a) = b.alpha_star {
        out.push("alpha_star", "accountant", Measurement::exact(a));
    }
    out.push("rounds", "accountant", Measurement::exact(b.rounds as f64));
    out.privacy = Some(b);
    Ok(out)
}

fn panel_outcome(cv: &PanelCvResult) -> SeedOutcome {
    let mut out = SeedOutcome::default();
    out.push("mse", "personalized", cv.personalized.into());
    out.push("mse", "local", cv.local.into());
    out.push("mse", "global", cv.global.into());
    out.trajectory = cv
        .folds
        .iter()
        .enumerate()
        .flat_map(|(i, (_, local, personalized))| {
            [("local_mse", *local), ("personalized_mse", *personalized)]
                .map(|(q, v)| TrajectoryRow { round: i + 1, client: None, quantity: q.into(), value: v })
        })
        .collect();
    out
}

/// Fails when the subcommand names a different kind than the config.
pub fn check_kind(config: &ExperimentConfig, expected: &str) -> Result<()> {
    let kind = config.experiment.kind();
    if kind == expected {
        Ok(())
    } else {
        Err(HarnessError::Config(format!("config is of kind `{kind}`, subcommand expects `{expected}`")))
    }
}
