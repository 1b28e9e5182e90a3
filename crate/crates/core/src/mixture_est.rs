//! Estimation under a discrete mixture prior.
//!
//! With the prior known, each client's estimate is the posterior mean over
//! the candidate centers. With it unknown, the server alternates between
//! clustering the clients' current estimates and letting every client
//! recompute its posterior against the clustered centers.

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ClientDataset;
use crate::error::{ensure, param, Error, Result};
use crate::prior::DiscretePrior;
use crate::privacy::{clip, MechanismSpec};
use crate::rng::{Purpose, RngContract, SERVER};

/// Posterior probability of each mixture component for one client.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorWeights(pub(crate) Vec<f64>);

impl PosteriorWeights {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Posterior weights from a client's sample mean and sample count:
/// `w_l ∝ p_l exp(-n ||xbar - mu_l||^2 / (2 s_x))`. The within-client
/// scatter is common to all components and cancels.
pub fn posterior_weights_from_mean(
    mean: &DVector<f64>,
    n: usize,
    probs: &[f64],
    centers: &[DVector<f64>],
    sigma_x_sq: f64,
) -> Result<PosteriorWeights> {
    ensure(!probs.is_empty() && probs.len() == centers.len(), || {
        "need one probability per center".into()
    })?;
    ensure(sigma_x_sq > 0.0, || format!("sigma_x_sq must be > 0, got {sigma_x_sq}"))?;
    if probs.iter().all(|&p| p <= 0.0) {
        return Err(param("all component probabilities are zero"));
    }
    let logs: Vec<f64> = probs
        .iter()
        .zip(centers)
        .map(|(&p, mu)| {
            if p <= 0.0 {
                f64::NEG_INFINITY
            } else {
                p.ln() - n as f64 * (mean - mu).norm_squared() / (2.0 * sigma_x_sq)
            }
        })
        .collect();
    Ok(PosteriorWeights(normalize_log_weights(&logs)))
}

/// Softmax of log-weights, shifted by the maximum.
pub(crate) fn normalize_log_weights(logs: &[f64]) -> Vec<f64> {
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let unnorm: Vec<f64> = logs.iter().map(|&l| (l - top).exp()).collect();
    let total: f64 = unnorm.iter().sum();
    unnorm.into_iter().map(|w| w / total).collect()
}

/// Posterior weights of one client's samples under a known prior.
pub fn posterior_weights(client: &ClientDataset, prior: &DiscretePrior, sigma_x_sq: f64) -> Result<PosteriorWeights> {
    if client.dim() != prior.centers()[0].len() {
        return Err(Error::Dimension { expected: prior.centers()[0].len(), got: client.dim() });
    }
    posterior_weights_from_mean(&client.sample_mean(), client.n(), prior.probs(), &prior.center_vectors(), sigma_x_sq)
}

/// `sum_l w_l mu_l`.
pub fn posterior_mean_mixture(weights: &PosteriorWeights, centers: &[DVector<f64>]) -> DVector<f64> {
    let mut out = DVector::zeros(centers[0].len());
    for (w, mu) in weights.0.iter().zip(centers) {
        out.axpy(*w, mu, 1.0);
    }
    out
}

/// Result of k-means clustering.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub centers: Vec<DVector<f64>>,
    pub probs: Vec<f64>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    /// Inertia after each assignment step.
    pub inertia_history: Vec<f64>,
}

fn nearest(point: &DVector<f64>, centers: &[DVector<f64>]) -> (usize, f64) {
    centers
        .iter()
        .enumerate()
        .map(|(l, c)| (l, (point - c).norm_squared()))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

fn seed_centers<R: Rng + ?Sized>(points: &[DVector<f64>], k: usize, rng: &mut R) -> Vec<DVector<f64>> {
    let mut chosen = vec![rng.random_range(0..points.len())];
    let mut dist: Vec<f64> = points.iter().map(|p| (p - &points[chosen[0]]).norm_squared()).collect();
    while chosen.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = dist.iter().rposition(|&d| d > 0.0).unwrap_or(0);
            for (i, &d) in dist.iter().enumerate() {
                if u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            // Only duplicates left: take any index not chosen yet.
            let free: Vec<usize> = (0..points.len()).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min((p - &points[next]).norm_squared());
        }
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

/// Lloyd's algorithm with distance-weighted seeding. Empty clusters are
/// reseeded at the point farthest from its own center.
pub fn lloyd_cluster<R: Rng + ?Sized>(
    points: &[DVector<f64>],
    k: usize,
    rng: &mut R,
    max_iters: usize,
) -> Result<ClusterModel> {
    ensure(k >= 1, || "k must be >= 1".into())?;
    if k > points.len() {
        return Err(param(format!("k = {k} exceeds the {} points", points.len())));
    }
    let d = points[0].len();
    ensure(points.iter().all(|p| p.len() == d), || "points differ in dimension".into())?;
    ensure(points.iter().all(|p| p.iter().all(|v| v.is_finite())), || "points must be finite".into())?;

    let mut centers = seed_centers(points, k, rng);
    let mut assignments: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    for iter in 0..max_iters.max(1) {
        let (assign, inertia) = assign_all(points, &centers);
        history.push(inertia);
        let stable = iter > 0 && assign == assignments;
        assignments = assign;
        if stable {
            break;
        }
        centers = update_centers(points, &assignments, &centers, k);
    }
    // Centers may have moved after the last assignment.
    let (assign, inertia) = assign_all(points, &centers);
    if assign != assignments || history.last() != Some(&inertia) {
        history.push(inertia);
    }
    assignments = assign;
    let mut counts = vec![0usize; k];
    for &a in &assignments {
        counts[a] += 1;
    }
    let probs = counts.iter().map(|&c| c as f64 / points.len() as f64).collect();
    Ok(ClusterModel { centers, probs, assignments, inertia, inertia_history: history })
}

fn assign_all(points: &[DVector<f64>], centers: &[DVector<f64>]) -> (Vec<usize>, f64) {
    let mut inertia = 0.0;
    let assign = points
        .iter()
        .map(|p| {
            let (l, d) = nearest(p, centers);
            inertia += d;
            l
        })
        .collect();
    (assign, inertia)
}

fn update_centers(
    points: &[DVector<f64>],
    assignments: &[usize],
    old: &[DVector<f64>],
    k: usize,
) -> Vec<DVector<f64>> {
    let d = points[0].len();
    let mut sums = vec![DVector::zeros(d); k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignments) {
        sums[a] += p;
        counts[a] += 1;
    }
    let mut centers: Vec<DVector<f64>> = sums
        .into_iter()
        .zip(&counts)
        .zip(old)
        .map(|((s, &c), o)| if c > 0 { s / c as f64 } else { o.clone() })
        .collect();
    let mut taken: Vec<usize> = Vec::new();
    for l in (0..k).filter(|&l| counts[l] == 0) {
        let far = points
            .iter()
            .enumerate()
            .filter(|(i, _)| !taken.contains(i))
            .map(|(i, p)| (i, (p - &centers[assignments[i]]).norm_squared()))
            .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best })
            .0;
        taken.push(far);
        centers[l] = points[far].clone();
    }
    centers
}

/// Bijection from estimated to true centers minimizing the summed
/// Euclidean distance. `result[i]` is the truth index matched to
/// estimate `i`.
pub fn match_centers(estimated: &[DVector<f64>], truth: &[DVector<f64>]) -> Result<Vec<usize>> {
    if estimated.len() != truth.len() {
        return Err(Error::Dimension { expected: truth.len(), got: estimated.len() });
    }
    let cost: Vec<Vec<f64>> = estimated
        .iter()
        .map(|e| truth.iter().map(|t| (e - t).norm()).collect())
        .collect();
    Ok(hungarian(&cost))
}

/// Minimum-cost perfect matching on a square cost matrix (shortest
/// augmenting paths with potentials).
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    // 1-based arrays; column 0 is a sentinel.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        row_of_col[0] = row;
        let mut col0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r = row_of_col[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for c in 1..=n {
                if !used[c] {
                    let cur = cost[r - 1][c - 1] - u[r] - v[c];
                    if cur < minv[c] {
                        minv[c] = cur;
                        way[c] = col0;
                    }
                    if minv[c] < delta {
                        delta = minv[c];
                        col1 = c;
                    }
                }
            }
            for c in 0..=n {
                if used[c] {
                    u[row_of_col[c]] += delta;
                    v[c] -= delta;
                } else {
                    minv[c] -= delta;
                }
            }
            col0 = col1;
            if row_of_col[col0] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col0];
            row_of_col[col0] = row_of_col[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for c in 1..=n {
        assignment[row_of_col[c] - 1] = c - 1;
    }
    assignment
}

/// Optional constraint on what clients upload each round.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UploadChannel {
    /// Uploads are rescaled into the ball of this radius.
    pub radius: f64,
    /// Applied coordinate-wise after clipping; its range must cover the radius.
    pub mechanism: MechanismSpec,
}

/// Server state after one round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSnapshot {
    pub round: usize,
    pub centers: Vec<DVector<f64>>,
    pub probs: Vec<f64>,
    pub inertia: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AltMinResult {
    pub estimates: Vec<DVector<f64>>,
    pub trajectory: Vec<ClusterSnapshot>,
}

impl AltMinResult {
    pub fn final_centers(&self) -> &[DVector<f64>] {
        &self.trajectory.last().expect("at least one round").centers
    }
}

/// Alternating minimization: start from local means, then each round the
/// server clusters the current estimates and every client replaces its
/// estimate with the posterior mean against the clustered centers.
pub fn alt_min_estimation(
    clients: &[ClientDataset],
    k: usize,
    rounds: usize,
    sigma_x_sq: f64,
    rng: &RngContract,
    channel: Option<UploadChannel>,
) -> Result<AltMinResult> {
    ensure(rounds >= 1, || "need at least one round".into())?;
    if clients.len() < k {
        return Err(param(format!("k = {k} exceeds the {} clients", clients.len())));
    }
    if let Some(ch) = &channel {
        ensure(ch.radius > 0.0, || "channel radius must be > 0".into())?;
        ch.mechanism.validate()?;
        if let Some((_, hi)) = ch.mechanism.input_range() {
            ensure(hi >= ch.radius, || "channel range must cover the clip radius".into())?;
        }
    }
    let stats: Vec<(DVector<f64>, usize)> = clients.iter().map(|c| (c.sample_mean(), c.n())).collect();
    let mut theta: Vec<DVector<f64>> = stats.iter().map(|(m, _)| m.clone()).collect();
    let mut trajectory = Vec::with_capacity(rounds);
    for t in 1..=rounds {
        let uploads: Vec<DVector<f64>> = match &channel {
            None => theta.clone(),
            Some(ch) => theta
                .par_iter()
                .zip(clients.par_iter())
                .map(|(th, c)| {
                    let clipped = clip(th, ch.radius);
                    let mut r = rng.stream(c.client_id(), t as u64, Purpose::Mechanism);
                    ch.mechanism.apply(&clipped, &mut r)
                })
                .collect::<Result<_>>()?,
        };
        let mut server_rng = rng.stream(SERVER, t as u64, Purpose::Cluster);
        let model = lloyd_cluster(&uploads, k, &mut server_rng, 100)?;
        theta = stats
            .par_iter()
            .map(|(mean, n)| {
                let w = posterior_weights_from_mean(mean, *n, &model.probs, &model.centers, sigma_x_sq)?;
                Ok(posterior_mean_mixture(&w, &model.centers))
            })
            .collect::<Result<_>>()?;
        trajectory.push(ClusterSnapshot {
            round: t,
            centers: model.centers,
            probs: model.probs,
            inertia: model.inertia,
        });
    }
    Ok(AltMinResult { estimates: theta, trajectory })
}

/// CSV with columns `round,center_idx,x0..x{d-1},prob`.
pub fn trajectory_csv(trajectory: &[ClusterSnapshot]) -> String {
    let d = trajectory.first().and_then(|s| s.centers.first()).map_or(0, |c| c.len());
    let mut out = String::from("round,center_idx");
    for j in 0..d {
        out.push_str(&format!(",x{j}"));
    }
    out.push_str(",prob\n");
    for snap in trajectory {
        for (l, (c, p)) in snap.centers.iter().zip(&snap.probs).enumerate() {
            out.push_str(&format!("{},{}", snap.round, l));
            for v in c.iter() {
                out.push_str(&format!(",{v}"));
            }
            out.push_str(&format!(",{p}\n"));
        }
    }
    out
}

/// `4 sqrt(d s_x / n) + 2 sqrt(ln(m^2 n) s_x / n) + r`.
pub fn concentration_radius(d: usize, sigma_x_sq: f64, n: usize, m: usize, r: f64) -> f64 {
    let nf = n as f64;
    let log_term = (m as f64 * m as f64 * nf).ln().max(0.0);
    4.0 * (d as f64 * sigma_x_sq / nf).sqrt() + 2.0 * (log_term * sigma_x_sq / nf).sqrt() + r
}
