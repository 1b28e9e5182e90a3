//! The AdaPeD training loop and its fine-tuning and private variants.

use nalgebra::DVector;
use rand::seq::index::sample;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{cross_entropy, kd_loss, psi_gradient, Classifier, KdDirection};
use crate::dataset::ClientDataset;
use crate::error::{ensure, Error, Result};
use crate::learn::TrajectoryRow;
use crate::privacy::{clip, AdapedAccounting, ClipMode, ClipSpec, RdpCurve};
use crate::rng::{Purpose, RngContract, SERVER};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdapedConfig {
    pub model: Classifier,
    pub iterations: usize,
    /// Synchronization gap.
    pub tau: usize,
    /// Clients sampled at each synchronization.
    pub sampled: usize,
    /// Step sizes for the personalized model, the global copy and psi.
    pub eta_theta: f64,
    pub eta_mu: f64,
    pub eta_psi: f64,
    pub psi_init: f64,
    pub psi_floor: f64,
    /// `None` uses every local sample at each step.
    pub batch_size: Option<usize>,
    /// Standard deviation of the shared random initialization.
    pub init_scale: f64,
    pub kd_direction: KdDirection,
    /// With `false` the personalized step ignores the distillation term.
    pub kd_enabled: bool,
}

impl Default for AdapedConfig {
    fn default() -> Self {
        Self {
            model: Classifier::LinearSoftmax { inputs: 10, classes: 2 },
            iterations: 300,
            tau: 1,
            sampled: 10,
            eta_theta: 0.1,
            eta_mu: 0.1,
            eta_psi: 0.03,
            psi_init: 4.0,
            psi_floor: 0.5,
            batch_size: None,
            init_scale: 0.01,
            kd_direction: KdDirection::GlobalFirst,
            kd_enabled: true,
        }
    }
}

impl AdapedConfig {
    pub fn validate(&self, m: usize) -> Result<()> {
        self.model.validate()?;
        ensure(self.iterations >= 1, || "iterations must be >= 1".into())?;
        ensure(self.tau >= 1, || "tau must be >= 1".into())?;
        if self.sampled == 0 || self.sampled > m {
            return Err(Error::TooFewClients { needed: self.sampled.max(1), got: m });
        }
        for (name, v) in [("eta_theta", self.eta_theta), ("eta_mu", self.eta_mu), ("eta_psi", self.eta_psi)] {
            ensure(v > 0.0 && v.is_finite(), || format!("{name} must be > 0, got {v}"))?;
        }
        ensure(self.psi_floor > 0.0, || "psi_floor must be > 0".into())?;
        ensure(self.psi_init >= self.psi_floor, || "psi_init must be >= psi_floor".into())?;
        ensure(self.batch_size != Some(0), || "batch_size must be >= 1".into())?;
        ensure(self.init_scale >= 0.0, || "init_scale must be >= 0".into())
    }
}

/// Clipping and noise for the two shared update directions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpAdapedConfig {
    pub clip: ClipSpec,
    pub sigma_q1: f64,
    pub sigma_q2: f64,
}

impl DpAdapedConfig {
    pub fn validate(&self) -> Result<()> {
        self.clip.validate()?;
        ensure(self.sigma_q1 >= 0.0 && self.sigma_q2 >= 0.0, || "noise scales must be >= 0".into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdapedState {
    pub iteration: usize,
    pub theta: Vec<DVector<f64>>,
    pub local_mu: Vec<DVector<f64>>,
    pub local_psi: Vec<f64>,
    pub mu: DVector<f64>,
    pub psi: f64,
    /// Clients sampled at the most recent synchronization, ascending.
    pub sampled: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdapedRun {
    pub state: AdapedState,
    /// Server psi and mean client psi after every synchronization.
    pub trajectory: Vec<TrajectoryRow>,
}

impl AdapedRun {
    pub fn mean_local_psi(&self) -> f64 {
        self.state.local_psi.iter().sum::<f64>() / self.state.local_psi.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DpAdapedRun {
    pub run: AdapedRun,
    pub curve: RdpCurve,
    pub accounting: AdapedAccounting,
    /// Largest norm of a clipped direction before noise was added.
    pub max_clipped_norm: f64,
}

struct Variant<'a> {
    dp: Option<&'a DpAdapedConfig>,
    /// Local steps allowed to unsampled clients between synchronizations.
    finetune_cap: Option<usize>,
}

pub fn adaped_run(clients: &[ClientDataset], config: &AdapedConfig, rng: &RngContract) -> Result<AdapedRun> {
    Ok(core(clients, config, Variant { dp: None, finetune_cap: None }, rng)?.0)
}

/// Unsampled clients keep training their personalized model against the
/// last global copy they received. `cap` bounds the number of such steps
/// in a row; `None` means no bound.
pub fn adaped_finetune_run(
    clients: &[ClientDataset],
    config: &AdapedConfig,
    cap: Option<usize>,
    rng: &RngContract,
) -> Result<AdapedRun> {
    let cap = Some(cap.unwrap_or(usize::MAX));
    Ok(core(clients, config, Variant { dp: None, finetune_cap: cap }, rng)?.0)
}

/// AdaPeD with clipped and noised updates of the shared quantities.
pub fn dp_adaped_run(
    clients: &[ClientDataset],
    config: &AdapedConfig,
    dp: &DpAdapedConfig,
    rng: &RngContract,
) -> Result<DpAdapedRun> {
    dp.validate()?;
    let (run, max_clipped_norm) = core(clients, config, Variant { dp: Some(dp), finetune_cap: None }, rng)?;
    let accounting = AdapedAccounting {
        sampled: config.sampled,
        clients: clients.len(),
        iterations: config.iterations,
        sync_gap: config.tau,
        clip: dp.clip,
        sigma_q1: dp.sigma_q1,
        sigma_q2: dp.sigma_q2,
    };
    Ok(DpAdapedRun { curve: accounting.curve()?, accounting, run, max_clipped_norm })
}

fn batch_indices(n: usize, size: Option<usize>, rng: &RngContract, client: u64, t: usize) -> Vec<usize> {
    match size {
        Some(b) if b < n => {
            let mut idx = sample(&mut rng.stream(client, t as u64, Purpose::Batch), n, b).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..n).collect(),
    }
}

/// The personalized step: cross-entropy plus the distillation pull.
fn theta_step(
    config: &AdapedConfig,
    client: &ClientDataset,
    batch: &[usize],
    theta: &DVector<f64>,
    mu: &DVector<f64>,
    psi: f64,
) -> Result<DVector<f64>> {
    let (_, mut g) = cross_entropy(&config.model, theta, client, batch)?;
    if config.kd_enabled {
        let kd = kd_loss(&config.model, theta, mu, client, batch, config.kd_direction)?;
        g.axpy(1.0 / (2.0 * psi), &kd.grad_theta, 1.0);
    }
    Ok(theta - g * config.eta_theta)
}

fn gaussian_noise(len: usize, sigma: f64, rng: &mut crate::rng::StreamRng) -> DVector<f64> {
    DVector::from_fn(len, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        sigma * z
    })
}

struct ClientStep {
    theta: DVector<f64>,
    mu: DVector<f64>,
    psi: f64,
    clipped_norm: f64,
}

#[allow(clippy::too_many_arguments)]
fn sampled_step(
    config: &AdapedConfig,
    dp: Option<&DpAdapedConfig>,
    client: &ClientDataset,
    batch: &[usize],
    theta: &DVector<f64>,
    mu: &DVector<f64>,
    psi: f64,
    rng: &RngContract,
    t: usize,
) -> Result<ClientStep> {
    let model = &config.model;
    let dir = config.kd_direction;
    let theta_new = theta_step(config, client, batch, theta, mu, psi)?;
    let h = kd_loss(model, &theta_new, mu, client, batch, dir)?.grad_mu / (2.0 * psi);
    let mut clipped_norm: f64 = 0.0;
    let (mu_new, k) = match dp {
        None => {
            let mu_new = mu - &h * config.eta_mu;
            let kd = kd_loss(model, &theta_new, &mu_new, client, batch, dir)?.value;
            (mu_new, psi_gradient(psi, kd))
        }
        Some(dp) => {
            let mut noise = rng.stream(client.client_id(), t as u64, Purpose::Noise);
            match dp.clip.mode {
                ClipMode::Separate => {
                    let hc = clip(&h, dp.clip.c1);
                    clipped_norm = clipped_norm.max(hc.norm());
                    let mu_new = mu - (hc + gaussian_noise(h.len(), dp.sigma_q1, &mut noise)) * config.eta_mu;
                    let kd = kd_loss(model, &theta_new, &mu_new, client, batch, dir)?.value;
                    let k = psi_gradient(psi, kd);
                    let kc = k / (k.abs() / dp.clip.c2).max(1.0);
                    clipped_norm = clipped_norm.max(kc.abs());
                    let nu: f64 = StandardNormal.sample(&mut noise);
                    (mu_new, kc + dp.sigma_q2 * nu)
                }
                ClipMode::Joint => {
                    // Both directions must exist before the joint clip, so
                    // k is taken at the pre-update global copy.
                    let kd = kd_loss(model, &theta_new, mu, client, batch, dir)?.value;
                    let k = psi_gradient(psi, kd);
                    let joint = DVector::from_iterator(h.len() + 1, h.iter().copied().chain([k]));
                    let jc = clip(&joint, dp.clip.c1);
                    clipped_norm = clipped_norm.max(jc.norm());
                    let noisy = jc + gaussian_noise(h.len() + 1, dp.sigma_q1, &mut noise);
                    let step = noisy.rows(0, h.len()).into_owned();
                    (mu - step * config.eta_mu, noisy[h.len()])
                }
            }
        }
    };
    let psi_new = (psi - config.eta_psi * k).max(config.psi_floor);
    Ok(ClientStep { theta: theta_new, mu: mu_new, psi: psi_new, clipped_norm })
}

fn core(clients: &[ClientDataset], config: &AdapedConfig, variant: Variant, rng: &RngContract) -> Result<(AdapedRun, f64)> {
    let m = clients.len();
    config.validate(m)?;
    if let Some(c) = clients.iter().find(|c| c.dim() != config.model.inputs()) {
        return Err(Error::Dimension { expected: config.model.inputs(), got: c.dim() });
    }
    ensure(clients.iter().all(|c| c.n() >= 1), || "every client needs at least one sample".into())?;

    let mu0 = config.model.init(config.init_scale, &mut rng.stream(SERVER, 0, Purpose::Init));
    let mut state = AdapedState {
        iteration: 0,
        theta: vec![mu0.clone(); m],
        local_mu: vec![mu0.clone(); m],
        local_psi: vec![config.psi_init; m],
        mu: mu0,
        psi: config.psi_init,
        sampled: Vec::new(),
    };
    let mut in_round = vec![false; m];
    let mut unsynced = vec![0usize; m];
    let mut trajectory = Vec::new();
    let mut max_norm: f64 = 0.0;

    for t in 0..config.iterations {
        if t % config.tau == 0 {
            let mut picked = sample(&mut rng.stream(SERVER, t as u64, Purpose::Sampling), m, config.sampled).into_vec();
            picked.sort_unstable();
            in_round.iter_mut().for_each(|v| *v = false);
            for &i in &picked {
                in_round[i] = true;
                unsynced[i] = 0;
                state.local_mu[i].copy_from(&state.mu);
                state.local_psi[i] = state.psi;
            }
            state.sampled = picked;
        }

        let updates: Vec<Option<ClientStep>> = (0..m)
            .into_par_iter()
            .map(|i| {
                let client = &clients[i];
                let (theta, mu, psi) = (&state.theta[i], &state.local_mu[i], state.local_psi[i]);
                if in_round[i] {
                    let batch = batch_indices(client.n(), config.batch_size, rng, client.client_id(), t);
                    return sampled_step(config, variant.dp, client, &batch, theta, mu, psi, rng, t).map(Some);
                }
                match variant.finetune_cap {
                    Some(cap) if unsynced[i] < cap => {
                        let batch = batch_indices(client.n(), config.batch_size, rng, client.client_id(), t);
                        let theta = theta_step(config, client, &batch, theta, mu, psi)?;
                        Ok(Some(ClientStep { theta, mu: mu.clone(), psi, clipped_norm: 0.0 }))
                    }
                    _ => Ok(None),
                }
            })
            .collect::<Result<_>>()?;

        for (i, up) in updates.into_iter().enumerate() {
            let Some(up) = up else { continue };
            if up.theta.iter().chain(up.mu.iter()).any(|v| !v.is_finite()) || !up.psi.is_finite() {
                return Err(Error::Divergence { iteration: t, reason: format!("client {i} produced non-finite values") });
            }
            if !in_round[i] {
                unsynced[i] += 1;
            }
            max_norm = max_norm.max(up.clipped_norm);
            state.theta[i] = up.theta;
            state.local_mu[i] = up.mu;
            state.local_psi[i] = up.psi;
        }

        if (t + 1) % config.tau == 0 {
            let k = state.sampled.len() as f64;
            let mut sum = DVector::zeros(state.mu.len());
            let mut psi = 0.0;
            for &i in &state.sampled {
                sum += &state.local_mu[i];
                psi += state.local_psi[i];
            }
            state.mu = sum / k;
            state.psi = psi / k;
            let round = (t + 1) / config.tau;
            trajectory.push(TrajectoryRow { round, client: None, quantity: "psi".into(), value: state.psi });
            for &i in &state.sampled {
                trajectory.push(TrajectoryRow {
                    round,
                    client: Some(clients[i].client_id()),
                    quantity: "psi".into(),
                    value: state.local_psi[i],
                });
            }
        }
        state.iteration = t + 1;
    }
    Ok((AdapedRun { state, trajectory }, max_norm))
}
