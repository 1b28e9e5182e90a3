use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, param, Error, Result};

/// Rescale `v` onto the ball of radius `c` if it lies outside; vectors
/// already inside are returned unchanged, bit for bit.
pub fn clip(v: &DVector<f64>, c: f64) -> DVector<f64> {
    debug_assert!(c > 0.0);
    let scale = (v.norm() / c).max(1.0);
    v / scale
}

/// Unbiased `k`-bit stochastic rounding of `x` onto the uniform grid of
/// `[-a, a]`.
pub fn stochastic_quantizer<R: Rng + ?Sized>(x: f64, bits: u32, a: f64, rng: &mut R) -> Result<f64> {
    ensure((1..=52).contains(&bits), || format!("bits must be in 1..=52, got {bits}"))?;
    ensure(a > 0.0 && a.is_finite(), || format!("range must be > 0, got {a}"))?;
    if !(-a..=a).contains(&x) {
        return Err(Error::Range { value: x, lo: -a, hi: a });
    }
    let levels = ((1u64 << bits) - 1) as f64;
    let scaled = (x + a) / (2.0 * a) * levels;
    let floor = scaled.floor();
    let up = rng.random::<f64>() < scaled - floor;
    let j = (floor + if up { 1.0 } else { 0.0 }).min(levels);
    Ok(grid_point(j, levels, a))
}

fn grid_point(j: f64, levels: f64, a: f64) -> f64 {
    if j <= 0.0 {
        -a
    } else if j >= levels {
        a
    } else {
        -a + 2.0 * a * j / levels
    }
}

/// `x + N(0, sigma_q^2 I)`.
pub fn gaussian_mechanism<R: Rng + ?Sized>(
    x: &DVector<f64>,
    sigma_q: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    ensure(sigma_q >= 0.0 && sigma_q.is_finite(), || format!("sigma_q must be >= 0, got {sigma_q}"))?;
    Ok(x.map(|v| {
        let z: f64 = StandardNormal.sample(rng);
        v + sigma_q * z
    }))
}

/// Output alphabet and law of the binary response channel at one input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BinaryResponseLaw {
    pub low: f64,
    pub high: f64,
    pub p_high: f64,
}

impl BinaryResponseLaw {
    pub fn p_low(&self) -> f64 {
        1.0 - self.p_high
    }
    pub fn mean(&self) -> f64 {
        self.p_high * self.high + self.p_low() * self.low
    }
    pub fn variance(&self) -> f64 {
        let spread = self.high - self.low;
        self.p_high * self.p_low() * spread * spread
    }
}

/// Two-point law of the binary response channel for input `x in [0, 1]`.
pub fn binary_response_law(x: f64, epsilon0: f64) -> Result<BinaryResponseLaw> {
    ensure(epsilon0 > 0.0 && epsilon0.is_finite(), || {
        format!("epsilon0 must be > 0, got {epsilon0}")
    })?;
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Range { value: x, lo: 0.0, hi: 1.0 });
    }
    let e = epsilon0.exp();
    let em1 = epsilon0.exp_m1();
    let p_high = 1.0 / (e + 1.0) + x * em1 / (e + 1.0);
    Ok(BinaryResponseLaw { low: -1.0 / em1, high: e / em1, p_high })
}

/// One draw of the binary response channel; unbiased for `x`.
pub fn binary_response<R: Rng + ?Sized>(x: f64, epsilon0: f64, rng: &mut R) -> Result<f64> {
    let law = binary_response_law(x, epsilon0)?;
    Ok(if rng.random::<f64>() < law.p_high { law.high } else { law.low })
}

/// Noise scale of the Gaussian local randomizer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdpSigma {
    pub sigma_q: f64,
    /// Set when `epsilon0 >= 1`, where the local privacy guarantee of the
    /// calibration no longer applies as stated.
    pub outside_theorem_range: bool,
}

/// `sigma_q = b * sqrt(8 ln(2/delta)) / epsilon0`.
pub fn gaussian_ldp_sigma(epsilon0: f64, delta: f64, b: f64) -> Result<LdpSigma> {
    ensure(epsilon0 > 0.0 && epsilon0.is_finite(), || {
        format!("epsilon0 must be > 0, got {epsilon0}")
    })?;
    ensure(delta > 0.0 && delta < 1.0, || format!("delta must be in (0, 1), got {delta}"))?;
    ensure(b > 0.0 && b.is_finite(), || format!("b must be > 0, got {b}"))?;
    Ok(LdpSigma {
        sigma_q: b * (8.0 * (2.0 / delta).ln()).sqrt() / epsilon0,
        outside_theorem_range: epsilon0 >= 1.0,
    })
}

/// A one-shot channel applied to a client statistic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MechanismSpec {
    Identity,
    Quantizer { bits: u32, range: f64 },
    GaussianLdp { epsilon0: f64, delta: f64, range: f64 },
    BinaryResponse { epsilon0: f64 },
}

impl MechanismSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            MechanismSpec::Identity => Ok(()),
            MechanismSpec::Quantizer { bits, range } => {
                ensure((1..=52).contains(&bits), || format!("bits must be in 1..=52, got {bits}"))?;
                ensure(range > 0.0 && range.is_finite(), || format!("range must be > 0, got {range}"))
            }
            MechanismSpec::GaussianLdp { epsilon0, delta, range } => {
                gaussian_ldp_sigma(epsilon0, delta, range).map(|_| ())
            }
            MechanismSpec::BinaryResponse { epsilon0 } => {
                binary_response_law(0.5, epsilon0).map(|_| ())
            }
        }
    }

    /// Per-coordinate noise scale. For the binary channel this is the
    /// largest output standard deviation over inputs in `[0, 1]`.
    pub fn sigma_q(&self) -> f64 {
        match *self {
            MechanismSpec::Identity => 0.0,
            MechanismSpec::Quantizer { bits, range } => range / ((1u64 << bits) - 1) as f64,
            MechanismSpec::GaussianLdp { epsilon0, delta, range } => {
                range * (8.0 * (2.0 / delta).ln()).sqrt() / epsilon0
            }
            MechanismSpec::BinaryResponse { epsilon0 } => {
                (epsilon0.exp() + 1.0) / (2.0 * epsilon0.exp_m1())
            }
        }
    }

    /// Inputs must lie in `[-range, range]` (or `[0, 1]` for the binary
    /// channel); `None` when the channel accepts any input.
    pub fn input_range(&self) -> Option<(f64, f64)> {
        match *self {
            MechanismSpec::Identity => None,
            MechanismSpec::Quantizer { range, .. } | MechanismSpec::GaussianLdp { range, .. } => {
                Some((-range, range))
            }
            MechanismSpec::BinaryResponse { .. } => Some((0.0, 1.0)),
        }
    }

    pub fn outside_theorem_range(&self) -> bool {
        matches!(*self, MechanismSpec::GaussianLdp { epsilon0, .. } if epsilon0 >= 1.0)
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, MechanismSpec::Identity)
    }

    pub fn apply_scalar<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> Result<f64> {
        match *self {
            MechanismSpec::Identity => Ok(x),
            MechanismSpec::Quantizer { bits, range } => stochastic_quantizer(x, bits, range, rng),
            MechanismSpec::GaussianLdp { range, .. } => {
                if !(-range..=range).contains(&x) {
                    return Err(Error::Range { value: x, lo: -range, hi: range });
                }
                let z: f64 = StandardNormal.sample(rng);
                Ok(x + self.sigma_q() * z)
            }
            MechanismSpec::BinaryResponse { epsilon0 } => binary_response(x, epsilon0, rng),
        }
    }

    /// Coordinate-wise application.
    pub fn apply<R: Rng + ?Sized>(&self, x: &DVector<f64>, rng: &mut R) -> Result<DVector<f64>> {
        self.validate()?;
        let out: Result<Vec<f64>> = x.iter().map(|&v| self.apply_scalar(v, rng)).collect();
        Ok(DVector::from_vec(out?))
    }
}

/// How DP-AdaPeD clips its two update directions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClipMode {
    /// Clip the model direction to `c1` and the scalar direction to `c2`.
    #[default]
    Separate,
    /// Clip the concatenated direction to `c1` with a single noise draw.
    Joint,
}

/// Clipping thresholds for the two DP-AdaPeD update directions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipSpec {
    pub c1: f64,
    pub c2: f64,
    #[serde(default)]
    pub mode: ClipMode,
}

impl ClipSpec {
    pub fn new(c1: f64, c2: f64, mode: ClipMode) -> Result<Self> {
        let spec = Self { c1, c2, mode };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c1 > 0.0 && self.c1.is_finite()) {
            return Err(param(format!("c1 must be > 0, got {}", self.c1)));
        }
        if !(self.c2 > 0.0 && self.c2.is_finite()) {
            return Err(param(format!("c2 must be > 0, got {}", self.c2)));
        }
        Ok(())
    }
}
