use serde::{Deserialize, Serialize};

use super::mechanism::{ClipMode, ClipSpec};
use crate::error::{ensure, Error, Result};

/// Loss at one Rényi order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum RdpValue {
    Finite(f64),
    Unbounded,
}

impl RdpValue {
    pub fn finite(self) -> Option<f64> {
        match self {
            RdpValue::Finite(v) => Some(v),
            RdpValue::Unbounded => None,
        }
    }
}

/// Rényi-DP loss as a function of the order `alpha > 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RdpCurve {
    /// `eps(alpha) = coef * alpha`.
    Linear { coef: f64 },
    /// Values at increasing orders; between grid points the next larger
    /// order is used, beyond the last point the curve is unbounded.
    Tabulated { alphas: Vec<f64>, epsilons: Vec<f64> },
    /// Pointwise sum.
    Sum { parts: Vec<RdpCurve> },
    Unbounded,
}

impl RdpCurve {
    pub fn zero() -> Self {
        RdpCurve::Linear { coef: 0.0 }
    }

    pub fn linear(coef: f64) -> Result<Self> {
        ensure(coef >= 0.0 && coef.is_finite(), || format!("coefficient must be >= 0, got {coef}"))?;
        Ok(RdpCurve::Linear { coef })
    }

    pub fn tabulated(alphas: Vec<f64>, epsilons: Vec<f64>) -> Result<Self> {
        ensure(!alphas.is_empty() && alphas.len() == epsilons.len(), || {
            "tabulated curve needs matching nonempty grids".into()
        })?;
        ensure(alphas.iter().all(|&a| a > 1.0), || "orders must exceed 1".into())?;
        ensure(alphas.windows(2).all(|w| w[0] < w[1]), || "orders must increase".into())?;
        ensure(epsilons.iter().all(|&e| e >= 0.0 && e.is_finite()), || {
            "losses must be finite and >= 0".into()
        })?;
        ensure(epsilons.windows(2).all(|w| w[0] <= w[1]), || "losses must be nondecreasing".into())?;
        Ok(RdpCurve::Tabulated { alphas, epsilons })
    }

    pub fn eval(&self, alpha: f64) -> Result<RdpValue> {
        if alpha.is_nan() || alpha <= 1.0 {
            return Err(Error::Order(alpha));
        }
        Ok(self.eval_unchecked(alpha))
    }

    fn eval_unchecked(&self, alpha: f64) -> RdpValue {
        match self {
            RdpCurve::Linear { coef } => RdpValue::Finite(coef * alpha),
            RdpCurve::Tabulated { alphas, epsilons } => {
                match alphas.iter().position(|&a| a >= alpha) {
                    Some(i) => RdpValue::Finite(epsilons[i]),
                    None => RdpValue::Unbounded,
                }
            }
            RdpCurve::Sum { parts } => {
                let mut total = 0.0;
                for p in parts {
                    match p.eval_unchecked(alpha) {
                        RdpValue::Finite(v) => total += v,
                        RdpValue::Unbounded => return RdpValue::Unbounded,
                    }
                }
                RdpValue::Finite(total)
            }
            RdpCurve::Unbounded => RdpValue::Unbounded,
        }
    }
}

/// Pointwise sum of curves (adaptive composition).
pub fn rdp_compose(curves: &[RdpCurve]) -> Result<RdpCurve> {
    ensure(!curves.is_empty(), || "nothing to compose".into())?;
    let mut coef = 0.0;
    let mut rest = Vec::new();
    let mut stack: Vec<&RdpCurve> = curves.iter().collect();
    while let Some(c) = stack.pop() {
        match c {
            RdpCurve::Unbounded => return Ok(RdpCurve::Unbounded),
            RdpCurve::Linear { coef: k } => coef += k,
            RdpCurve::Sum { parts } => stack.extend(parts.iter()),
            t @ RdpCurve::Tabulated { .. } => rest.push(t.clone()),
        }
    }
    if rest.is_empty() {
        return Ok(RdpCurve::Linear { coef });
    }
    if coef > 0.0 {
        rest.push(RdpCurve::Linear { coef });
    }
    Ok(RdpCurve::Sum { parts: rest })
}

/// Approximate-DP guarantee.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpBudget {
    pub epsilon: f64,
    pub delta: f64,
}

impl DpBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        ensure(epsilon > 0.0 && epsilon.is_finite(), || format!("epsilon must be > 0, got {epsilon}"))?;
        ensure(delta > 0.0 && delta < 1.0, || format!("delta must be in (0, 1), got {delta}"))?;
        Ok(Self { epsilon, delta })
    }
}

/// Which side of the `(epsilon, delta)` pair is fixed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DpTarget {
    Delta(f64),
    Epsilon(f64),
}

/// Result of converting an RDP curve, with the optimizing order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpConversion {
    pub alpha_star: f64,
    pub epsilon: f64,
    pub delta: f64,
}

impl DpConversion {
    pub fn budget(&self) -> Result<DpBudget> {
        DpBudget::new(self.epsilon, self.delta)
    }
}

pub const GRID_MIN_ALPHA: f64 = 1.0 + 1e-3;
pub const GRID_MAX_ALPHA: f64 = 4096.0;
pub const GRID_POINTS: usize = 2000;

/// Log-spaced orders used by [`rdp_to_dp`].
pub fn alpha_grid() -> Vec<f64> {
    let (lo, hi) = (GRID_MIN_ALPHA.ln(), GRID_MAX_ALPHA.ln());
    (0..GRID_POINTS)
        .map(|i| (lo + (hi - lo) * i as f64 / (GRID_POINTS - 1) as f64).exp())
        .collect()
}

/// `eps(alpha) + (ln(1/delta) + (alpha-1) ln(1-1/alpha) - ln alpha)/(alpha-1)`.
fn epsilon_objective(curve: &RdpCurve, alpha: f64, delta: f64) -> f64 {
    match curve.eval_unchecked(alpha) {
        RdpValue::Finite(e) => {
            let am1 = alpha - 1.0;
            e + ((1.0 / delta).ln() + am1 * (am1 / alpha).ln() - alpha.ln()) / am1
        }
        RdpValue::Unbounded => f64::INFINITY,
    }
}

/// `ln` of `exp((alpha-1)(eps(alpha)-eps)) / (alpha-1) * (1-1/alpha)^alpha`.
fn log_delta_objective(curve: &RdpCurve, alpha: f64, epsilon: f64) -> f64 {
    match curve.eval_unchecked(alpha) {
        RdpValue::Finite(e) => {
            let am1 = alpha - 1.0;
            am1 * (e - epsilon) - am1.ln() + alpha * (am1 / alpha).ln()
        }
        RdpValue::Unbounded => f64::INFINITY,
    }
}

fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..200 {
        if hi - lo <= 1e-13 * hi {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

fn minimize_over_orders(f: impl Fn(f64) -> f64) -> Result<(f64, f64)> {
    let grid = alpha_grid();
    let values: Vec<f64> = grid.iter().map(|&a| f(a)).collect();
    let (best, &best_val) = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("grid is nonempty");
    if !best_val.is_finite() {
        return Err(Error::NoBudget);
    }
    let lo = grid[best.saturating_sub(1)];
    let hi = grid[(best + 1).min(grid.len() - 1)];
    let (a, v) = golden_section(&f, lo, hi);
    Ok(if v < best_val { (a, v) } else { (grid[best], best_val) })
}

/// Convert an RDP curve to `(epsilon, delta)`-DP by minimizing over orders.
pub fn rdp_to_dp(curve: &RdpCurve, target: DpTarget) -> Result<DpConversion> {
    match target {
        DpTarget::Delta(delta) => {
            ensure(delta > 0.0 && delta < 1.0, || format!("delta must be in (0, 1), got {delta}"))?;
            let (alpha_star, epsilon) = minimize_over_orders(|a| epsilon_objective(curve, a, delta))?;
            Ok(DpConversion { alpha_star, epsilon: epsilon.max(0.0), delta })
        }
        DpTarget::Epsilon(epsilon) => {
            ensure(epsilon > 0.0 && epsilon.is_finite(), || format!("epsilon must be > 0, got {epsilon}"))?;
            let (alpha_star, log_delta) = minimize_over_orders(|a| log_delta_objective(curve, a, epsilon))?;
            Ok(DpConversion { alpha_star, epsilon, delta: log_delta.exp().min(1.0) })
        }
    }
}

/// Inputs of the DP-AdaPeD privacy bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdapedAccounting {
    /// Clients sampled per round.
    pub sampled: usize,
    /// Population size.
    pub clients: usize,
    /// Local iterations.
    pub iterations: usize,
    /// Iterations between synchronizations.
    pub sync_gap: usize,
    pub clip: ClipSpec,
    pub sigma_q1: f64,
    pub sigma_q2: f64,
}

impl AdapedAccounting {
    pub fn validate(&self) -> Result<()> {
        ensure(self.sampled >= 1 && self.sampled <= self.clients, || {
            format!("need 1 <= K <= m, got K={} m={}", self.sampled, self.clients)
        })?;
        ensure(self.iterations >= 1, || "T must be >= 1".into())?;
        ensure(self.sync_gap >= 1, || "tau must be >= 1".into())?;
        self.clip.validate()?;
        ensure(self.sigma_q1 >= 0.0 && self.sigma_q2 >= 0.0, || "noise scales must be >= 0".into())
    }

    /// Number of synchronization rounds and whether `tau` failed to divide
    /// `T` (in which case the count was rounded up).
    pub fn rounds(&self) -> (usize, bool) {
        let r = self.iterations.div_ceil(self.sync_gap);
        (r, !self.iterations.is_multiple_of(self.sync_gap))
    }

    /// `eps(alpha) = (K/m)^2 * 6 * rounds * alpha * (C1^2/(K s1^2) + C2^2/(K s2^2))`;
    /// joint clipping keeps only the first term.
    pub fn curve(&self) -> Result<RdpCurve> {
        self.validate()?;
        let k = self.sampled as f64;
        let ratio = k / self.clients as f64;
        let (rounds, _) = self.rounds();
        let c1 = self.clip.c1;
        let c2 = self.clip.c2;
        let per_noise = match self.clip.mode {
            ClipMode::Separate => {
                if self.sigma_q1 == 0.0 || self.sigma_q2 == 0.0 {
                    return Ok(RdpCurve::Unbounded);
                }
                c1 * c1 / (k * self.sigma_q1 * self.sigma_q1)
                    + c2 * c2 / (k * self.sigma_q2 * self.sigma_q2)
            }
            ClipMode::Joint => {
                if self.sigma_q1 == 0.0 {
                    return Ok(RdpCurve::Unbounded);
                }
                c1 * c1 / (k * self.sigma_q1 * self.sigma_q1)
            }
        };
        Ok(RdpCurve::Linear { coef: ratio * ratio * 6.0 * rounds as f64 * per_noise })
    }
}

/// DP-AdaPeD loss at order `alpha`.
pub fn adaped_rdp(alpha: f64, params: &AdapedAccounting) -> Result<RdpValue> {
    if alpha.is_nan() || alpha <= 1.0 {
        return Err(Error::Order(alpha));
    }
    params.curve()?.eval(alpha)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn accounting(k: usize, m: usize, t: usize, tau: usize, c: (f64, f64), s: (f64, f64)) -> AdapedAccounting {
        AdapedAccounting {
            sampled: k,
            clients: m,
            iterations: t,
            sync_gap: tau,
            clip: ClipSpec { c1: c.0, c2: c.1, mode: ClipMode::Separate },
            sigma_q1: s.0,
            sigma_q2: s.1,
        }
    }

    #[test]
    fn worked_example() {
        let acc = accounting(10, 100, 100, 10, (1.0, 1.0), (1.0, 1.0));
        let e = adaped_rdp(2.0, &acc).unwrap().finite().unwrap();
        assert!((e - 0.24).abs() < 1e-12);
    }

    #[test]
    fn full_participation_single_round() {
        let acc = accounting(7, 7, 5, 5, (2.0, 0.5), (1.5, 0.25));
        let e = adaped_rdp(3.0, &acc).unwrap().finite().unwrap();
        let expected = 6.0 * 3.0 * (4.0 / (7.0 * 2.25) + 0.25 / (7.0 * 0.0625));
        assert!((e - expected).abs() < 1e-12);
    }

    #[test]
    fn doubling_noise_quarters_loss() {
        let a = accounting(5, 50, 40, 4, (1.0, 2.0), (0.7, 1.1));
        let mut b = a;
        b.sigma_q1 *= 2.0;
        b.sigma_q2 *= 2.0;
        let ea = adaped_rdp(5.0, &a).unwrap().finite().unwrap();
        let eb = adaped_rdp(5.0, &b).unwrap().finite().unwrap();
        assert!((eb - ea / 4.0).abs() < 1e-12);
    }

    #[test]
    fn order_and_noise_edge_cases() {
        let acc = accounting(1, 2, 1, 1, (1.0, 1.0), (1.0, 1.0));
        assert_eq!(adaped_rdp(1.0, &acc), Err(Error::Order(1.0)));
        let mut silent = acc;
        silent.sigma_q2 = 0.0;
        assert_eq!(adaped_rdp(2.0, &silent).unwrap(), RdpValue::Unbounded);
        let mut uneven = accounting(1, 2, 10, 3, (1.0, 1.0), (1.0, 1.0));
        assert_eq!(uneven.rounds(), (4, true));
        uneven.iterations = 9;
        assert_eq!(uneven.rounds(), (3, false));
    }

    #[test]
    fn joint_mode_uses_first_threshold_only() {
        let mut acc = accounting(10, 100, 100, 10, (1.0, 9.0), (1.0, 0.0));
        acc.clip.mode = ClipMode::Joint;
        let e = adaped_rdp(2.0, &acc).unwrap().finite().unwrap();
        assert!((e - 0.12).abs() < 1e-12);
    }

    #[test]
    fn compose_rules() {
        let c = RdpCurve::linear(0.3).unwrap();
        assert_eq!(rdp_compose(&[c.clone(), RdpCurve::zero()]).unwrap(), c);
        let many = rdp_compose(&vec![c.clone(); 12]).unwrap();
        let v = many.eval(4.0).unwrap().finite().unwrap();
        assert!((v - 12.0 * 0.3 * 4.0).abs() < 1e-12);
        assert!(rdp_compose(&[]).is_err());
        assert_eq!(rdp_compose(&[c.clone(), RdpCurve::Unbounded]).unwrap(), RdpCurve::Unbounded);
    }

    #[test]
    fn compose_is_order_independent() {
        let parts = vec![
            RdpCurve::linear(0.1).unwrap(),
            RdpCurve::tabulated(vec![1.5, 2.0, 8.0, 64.0], vec![0.1, 0.2, 0.5, 3.0]).unwrap(),
            RdpCurve::linear(0.02).unwrap(),
            RdpCurve::tabulated(vec![2.0, 32.0], vec![0.05, 0.4]).unwrap(),
        ];
        let mut reversed = parts.clone();
        reversed.reverse();
        let mut rotated = parts.clone();
        rotated.rotate_left(1);
        let a = rdp_compose(&parts).unwrap();
        let b = rdp_compose(&reversed).unwrap();
        let c = rdp_compose(&rotated).unwrap();
        for i in 0..20 {
            let alpha = 1.1 + i as f64 * 1.5;
            let va = a.eval(alpha).unwrap();
            assert_eq!(va, b.eval(alpha).unwrap());
            assert_eq!(va, c.eval(alpha).unwrap());
        }
    }

    #[test]
    fn tabulated_validation() {
        assert!(RdpCurve::tabulated(vec![2.0, 3.0], vec![0.5, 0.4]).is_err());
        assert!(RdpCurve::tabulated(vec![1.0], vec![0.5]).is_err());
        let t = RdpCurve::tabulated(vec![2.0, 4.0], vec![0.1, 0.3]).unwrap();
        assert_eq!(t.eval(1.5).unwrap(), RdpValue::Finite(0.1));
        assert_eq!(t.eval(3.0).unwrap(), RdpValue::Finite(0.3));
        assert_eq!(t.eval(5.0).unwrap(), RdpValue::Unbounded);
    }

    fn brute_force_epsilon(rho: f64, delta: f64) -> f64 {
        let points = 100_000;
        let (lo, hi) = (1.001f64.ln(), 4096f64.ln());
        (0..points)
            .map(|i| {
                let a = (lo + (hi - lo) * i as f64 / (points - 1) as f64).exp();
                rho * a + ((1.0 / delta).ln() + (a - 1.0) * (1.0 - 1.0 / a).ln() - a.ln()) / (a - 1.0)
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn conversion_matches_brute_force() {
        for rho in [1e-4, 1e-3, 0.01, 0.1, 1.0] {
            let got = rdp_to_dp(&RdpCurve::linear(rho).unwrap(), DpTarget::Delta(1e-5)).unwrap();
            let expect = brute_force_epsilon(rho, 1e-5);
            assert!((got.epsilon - expect).abs() < 1e-6, "{rho}: {} vs {expect}", got.epsilon);
            assert!(got.epsilon <= expect + 1e-12);
        }
    }

    #[test]
    fn conversion_is_a_minimum_over_the_grid() {
        let curve = RdpCurve::linear(0.05).unwrap();
        let got = rdp_to_dp(&curve, DpTarget::Delta(1e-6)).unwrap();
        for a in alpha_grid() {
            assert!(got.epsilon <= epsilon_objective(&curve, a, 1e-6));
        }
        let dual = rdp_to_dp(&curve, DpTarget::Epsilon(2.0)).unwrap();
        for a in alpha_grid() {
            assert!(dual.delta.ln() <= log_delta_objective(&curve, a, 2.0) + 1e-15);
        }
    }

    #[test]
    fn smaller_delta_never_gives_smaller_epsilon() {
        let curve = RdpCurve::linear(0.02).unwrap();
        let mut last = 0.0;
        for delta in [0.5, 0.1, 1e-2, 1e-3, 1e-5, 1e-8, 1e-12] {
            let e = rdp_to_dp(&curve, DpTarget::Delta(delta)).unwrap().epsilon;
            assert!(e >= last);
            last = e;
        }
    }

    #[test]
    fn delta_near_one_limit() {
        let rho = 0.01;
        let curve = RdpCurve::linear(rho).unwrap();
        let near = rdp_to_dp(&curve, DpTarget::Delta(1.0 - 1e-12)).unwrap().epsilon;
        let limit = alpha_grid()
            .into_iter()
            .map(|a| rho * a + ((a - 1.0) * (1.0 - 1.0 / a).ln() - a.ln()) / (a - 1.0))
            .fold(f64::INFINITY, f64::min)
            .max(0.0);
        assert!((near - limit).abs() < 1e-6);
    }

    #[test]
    fn epsilon_and_delta_directions_agree() {
        let curve = RdpCurve::linear(0.01).unwrap();
        let e = rdp_to_dp(&curve, DpTarget::Delta(1e-5)).unwrap();
        let d = rdp_to_dp(&curve, DpTarget::Epsilon(e.epsilon)).unwrap();
        assert!((d.delta.ln() - 1e-5f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn unbounded_curve_has_no_budget() {
        assert_eq!(rdp_to_dp(&RdpCurve::Unbounded, DpTarget::Delta(1e-5)), Err(Error::NoBudget));
    }
}
