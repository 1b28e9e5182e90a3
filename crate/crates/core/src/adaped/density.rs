//! The population density over binary predictors whose negative log gives
//! the distillation regularizer.

use statrs::function::beta::ln_beta;

use crate::error::{ensure, Error, Result};

/// Density over tables `q(x) = p_theta(y = 1 | x)` centred on the global
/// model's table `p_mu(x)`:
/// `c(psi) exp(-psi KL(p_mu || q))` with the divergence weighted by `p(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct KdPopulationDensity {
    p_mu: Vec<f64>,
    p_x: Vec<f64>,
    psi: f64,
    log_norm: f64,
}

/// Builds the density for a binary output alphabet. `p_mu` is a table of
/// per-class probabilities for each input; only two classes are supported.
pub fn kd_population_density(p_mu: &[Vec<f64>], psi: f64, p_x: &[f64]) -> Result<KdPopulationDensity> {
    ensure(psi >= 0.0 && psi.is_finite(), || format!("psi must be >= 0, got {psi}"))?;
    ensure(!p_mu.is_empty() && p_mu.len() == p_x.len(), || "one input probability per table row".into())?;
    if let Some(row) = p_mu.iter().find(|r| r.len() != 2) {
        return Err(Error::Unsupported(format!("only binary outputs are supported, got {} classes", row.len())));
    }
    ensure(p_x.iter().all(|&p| p > 0.0), || "input probabilities must be > 0".into())?;
    ensure((p_x.iter().sum::<f64>() - 1.0).abs() < 1e-9, || "input probabilities must sum to 1".into())?;
    ensure(p_mu.iter().all(|r| r[0] >= 0.0 && r[1] >= 0.0 && (r[0] + r[1] - 1.0).abs() < 1e-9), || {
        "each row of p_mu must be a distribution".into()
    })?;
    let ones: Vec<f64> = p_mu.iter().map(|r| r[1]).collect();
    // Each factor integrates q^(psi p(x) p_mu) (1 - q)^(psi p(x) (1 - p_mu)).
    let log_norm = ones
        .iter()
        .zip(p_x)
        .map(|(&pm, &px)| ln_beta(1.0 + psi * px * pm, 1.0 + psi * px * (1.0 - pm)))
        .sum();
    Ok(KdPopulationDensity { p_mu: ones, p_x: p_x.to_vec(), psi, log_norm })
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 { 0.0 } else { x * y.ln() }
}

impl KdPopulationDensity {
    /// Log-density at a table of `P(y = 1 | x)` values in `[0, 1]`.
    pub fn log_density(&self, q: &[f64]) -> Result<f64> {
        if q.len() != self.p_mu.len() {
            return Err(Error::Dimension { expected: self.p_mu.len(), got: q.len() });
        }
        if let Some(&bad) = q.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Range { value: bad, lo: 0.0, hi: 1.0 });
        }
        if self.psi == 0.0 {
            return Ok(-self.log_norm);
        }
        let cross: f64 = self
            .p_mu
            .iter()
            .zip(&self.p_x)
            .zip(q)
            .map(|((&pm, &px), &qv)| px * (xlogy(pm, qv) + xlogy(1.0 - pm, 1.0 - qv)))
            .sum();
        Ok(self.psi * cross - self.log_norm)
    }

    /// `KL(p_mu || q)` weighted by the input distribution.
    pub fn divergence(&self, q: &[f64]) -> f64 {
        self.p_mu
            .iter()
            .zip(&self.p_x)
            .zip(q)
            .map(|((&pm, &px), &qv)| {
                px * (xlogy(pm, pm) - xlogy(pm, qv) + xlogy(1.0 - pm, 1.0 - pm) - xlogy(1.0 - pm, 1.0 - qv))
            })
            .sum()
    }

    /// `log c(psi)`, so that `log_density(q) = log c(psi) - psi KL(p_mu || q)`.
    pub fn log_normalizer(&self) -> f64 {
        let entropy: f64 = self
            .p_mu
            .iter()
            .zip(&self.p_x)
            .map(|(&pm, &px)| -px * (xlogy(pm, pm) + xlogy(1.0 - pm, 1.0 - pm)))
            .sum();
        -self.psi * entropy - self.log_norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Simpson's rule after `q = (1 - cos u) / 2`, which smooths the
    /// endpoint behaviour of `q^a (1 - q)^b`.
    fn integrate_unit(f: impl Fn(f64) -> f64, panels: usize) -> f64 {
        let h = std::f64::consts::PI / panels as f64;
        let g = |u: f64| f((1.0 - u.cos()) / 2.0) * u.sin() / 2.0;
        let mut s = g(0.0) + g(std::f64::consts::PI);
        for i in 1..panels {
            s += g(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn single_input_integrates_to_one() {
        let dens = kd_population_density(&[vec![0.5, 0.5]], 1.0, &[1.0]).unwrap();
        let total = integrate_unit(|q| dens.log_density(&[q]).unwrap().exp(), 2000);
        assert!((total - 1.0).abs() < 1e-6, "{total}");
        // With psi p(x) = 1 the shape is sqrt(q (1 - q)) over B(3/2, 3/2).
        let q = 0.3f64;
        let expected = (q * (1.0 - q)).sqrt() / ln_beta(1.5, 1.5).exp();
        assert!((dens.log_density(&[q]).unwrap().exp() - expected).abs() < 1e-12);
    }

    #[test]
    fn two_inputs_integrate_to_one() {
        let dens = kd_population_density(&[vec![0.2, 0.8], vec![0.7, 0.3]], 6.0, &[0.4, 0.6]).unwrap();
        let total = integrate_unit(
            |a| integrate_unit(|b| dens.log_density(&[a, b]).unwrap().exp(), 400),
            400,
        );
        assert!((total - 1.0).abs() < 1e-6, "{total}");
    }

    #[test]
    fn matches_exponential_family_form() {
        let dens = kd_population_density(&[vec![0.2, 0.8], vec![0.7, 0.3]], 3.0, &[0.4, 0.6]).unwrap();
        let q = [0.35, 0.9];
        let via_kl = dens.log_normalizer() - 3.0 * dens.divergence(&q);
        assert!((dens.log_density(&q).unwrap() - via_kl).abs() < 1e-12);
    }

    #[test]
    fn zero_psi_is_uniform() {
        let dens = kd_population_density(&[vec![0.9, 0.1], vec![0.5, 0.5]], 0.0, &[0.5, 0.5]).unwrap();
        for q in [[0.0, 0.0], [0.3, 0.8], [1.0, 0.5]] {
            assert!(dens.log_density(&q).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn peaks_at_global_table() {
        let dens = kd_population_density(&[vec![0.35, 0.65]], 10.0, &[1.0]).unwrap();
        let at = dens.log_density(&[0.65]).unwrap();
        for q in [0.0, 0.3, 0.6, 0.64, 0.66, 0.7, 1.0] {
            assert!(dens.log_density(&[q]).unwrap() < at);
        }
    }

    #[test]
    fn rejects_wider_alphabets() {
        let err = kd_population_density(&[vec![0.2, 0.3, 0.5]], 1.0, &[1.0]).unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)));
    }
}
