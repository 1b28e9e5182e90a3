//! Experiment documents.
//!
//! A config is a JSON object with `kind`, `params`, `seeds` and an optional
//! `output` block. `params` is specific to the kind and rejects unknown
//! fields.

use std::path::PathBuf;

use fedbayes_core::adaped::{default_fedavg, AdapedConfig, DpAdapedConfig, TaskSpec};
use fedbayes_core::learn::{FedAvgConfig, GdConfig, GmmConfig};
use fedbayes_core::presets::{paper_fed, BernPreset, DpGaussPreset, LinregPreset, PRESET_NAMES};
use fedbayes_core::privacy::AdapedAccounting;
use fedbayes_core::{GaussianMixturePrior, ScalarPrior};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub path: PathBuf,
    #[serde(default)]
    pub format: Format,
}

/// A channel applied to every client average before release. Its input
/// range is the projection bound of the experiment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelSpec {
    Quantizer { bits: u32 },
    GaussianLdp { epsilon0: f64, delta: f64 },
}

impl ChannelSpec {
    pub fn label(&self) -> String {
        match self {
            ChannelSpec::Quantizer { bits } => format!("quantized_{bits}bit"),
            ChannelSpec::GaussianLdp { epsilon0, .. } => format!("ldp_eps{epsilon0}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussParams {
    pub m: usize,
    pub n: usize,
    pub d: usize,
    pub sigma_theta_sq: f64,
    pub sigma_x_sq: f64,
    /// Population mean; zeros when absent.
    #[serde(default)]
    pub mu: Option<Vec<f64>>,
    #[serde(default)]
    pub channels: Vec<ChannelSpec>,
    /// Projection bound for the channels; when absent it is derived from
    /// the largest coordinate of `mu` and the population sizes.
    #[serde(default)]
    pub bound: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BernParams {
    pub m: usize,
    pub n: usize,
    pub prior: ScalarPrior,
    /// Adds the locally private estimator at this level.
    #[serde(default)]
    pub epsilon0: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureParams {
    pub m: usize,
    pub n: usize,
    pub sigma_x_sq: f64,
    pub centers: Vec<Vec<f64>>,
    pub probs: Vec<f64>,
    pub rounds: usize,
}

fn default_init_sigma_x_sq() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinregParams {
    pub m: usize,
    pub n: usize,
    pub d: usize,
    #[serde(default = "paper_linreg")]
    pub population: LinregPreset,
    #[serde(default)]
    pub gd: GdConfig,
    /// Starting noise variance; models start at their least-squares fits.
    #[serde(default = "default_init_sigma_x_sq")]
    pub init_sigma_x_sq: f64,
}

fn paper_linreg() -> LinregPreset {
    LinregPreset::PAPER
}

fn default_feature_sd() -> f64 {
    1.0
}

fn default_test_samples() -> usize {
    200
}

fn default_one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogregParams {
    pub m: usize,
    pub n: usize,
    pub d: usize,
    pub sigma_theta_sq: f64,
    /// Spread of the randomly drawn population mean.
    pub mean_sd: f64,
    #[serde(default = "default_feature_sd")]
    pub feature_sd: f64,
    #[serde(default = "default_test_samples")]
    pub test_samples: usize,
    #[serde(default)]
    pub gd: GdConfig,
    #[serde(default = "default_one")]
    pub init_sigma_theta_sq: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmmLearnParams {
    pub m: usize,
    pub n: usize,
    pub prior: GaussianMixturePrior,
    pub sigma_x_sq: f64,
    #[serde(default = "default_feature_sd")]
    pub feature_sd: f64,
    #[serde(default)]
    pub gmm: GmmConfig,
}

fn default_fed() -> FedAvgConfig {
    default_fedavg()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapedParams {
    #[serde(default)]
    pub tasks: TaskSpec,
    #[serde(default = "paper_fed")]
    pub adaped: AdapedConfig,
    #[serde(default = "default_fed")]
    pub fedavg: FedAvgConfig,
}

fn default_delta() -> f64 {
    1e-5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpAdapedParams {
    #[serde(default)]
    pub tasks: TaskSpec,
    #[serde(default = "paper_fed")]
    pub adaped: AdapedConfig,
    pub dp: DpAdapedConfig,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccountantParams {
    pub accounting: AdapedAccounting,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum PanelSource {
    /// CSV with header `id,r1,...,rk` and 0/1 cells.
    File { path: PathBuf },
    /// Units with success probabilities drawn from `prior`, one bit per round.
    Synthetic { units: usize, rounds: usize, prior: ScalarPrior },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanelCvParams {
    pub panel: PanelSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "kebab-case")]
pub enum Experiment {
    Gauss(GaussParams),
    Bern(BernParams),
    Mixture(MixtureParams),
    Linreg(LinregParams),
    Logreg(LogregParams),
    GmmLearn(GmmLearnParams),
    Adaped(AdapedParams),
    DpAdaped(DpAdapedParams),
    Accountant(AccountantParams),
    PanelCv(PanelCvParams),
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Gauss(_) => "gauss",
            Experiment::Bern(_) => "bern",
            Experiment::Mixture(_) => "mixture",
            Experiment::Linreg(_) => "linreg",
            Experiment::Logreg(_) => "logreg",
            Experiment::GmmLearn(_) => "gmm-learn",
            Experiment::Adaped(_) => "adaped",
            Experiment::DpAdaped(_) => "dp-adaped",
            Experiment::Accountant(_) => "accountant",
            Experiment::PanelCv(_) => "panel-cv",
        }
    }
}

pub const KINDS: [&str; 10] =
    ["gauss", "bern", "mixture", "linreg", "logreg", "gmm-learn", "adaped", "dp-adaped", "accountant", "panel-cv"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(flatten)]
    pub experiment: Experiment,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSpec>,
}

const TOP_LEVEL: [&str; 4] = ["kind", "params", "seeds", "output"];

fn config_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| config_err(e.to_string()))?;
        let object = value.as_object().ok_or_else(|| config_err("config must be a JSON object"))?;
        if let Some(kind) = object.get("kind").and_then(|k| k.as_str()) {
            if !KINDS.contains(&kind) {
                return Err(config_err(format!("unknown kind `{kind}`; expected one of {}", KINDS.join(", "))));
            }
        }
        if let Some(extra) = object.keys().find(|k| !TOP_LEVEL.contains(&k.as_str())) {
            return Err(config_err(format!("unknown top-level field `{extra}`")));
        }
        let config: Self = serde_json::from_value(value).map_err(|e| config_err(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(config_err("seeds must be nonempty"));
        }
        let positive = |name: &str, v: usize| {
            if v == 0 {
                Err(config_err(format!("{name} must be >= 1")))
            } else {
                Ok(())
            }
        };
        match &self.experiment {
            Experiment::Gauss(p) => {
                positive("m", p.m)?;
                positive("n", p.n)?;
                positive("d", p.d)?;
                if let Some(mu) = &p.mu {
                    if mu.len() != p.d {
                        return Err(config_err(format!("mu has {} entries, d = {}", mu.len(), p.d)));
                    }
                }
            }
            Experiment::Bern(p) => {
                positive("m", p.m)?;
                positive("n", p.n)?;
            }
            Experiment::Mixture(p) => {
                positive("m", p.m)?;
                positive("n", p.n)?;
                positive("rounds", p.rounds)?;
                if p.centers.is_empty() || p.centers.len() != p.probs.len() {
                    return Err(config_err("need one probability per center"));
                }
            }
            Experiment::Linreg(p) => {
                positive("m", p.m)?;
                positive("d", p.d)?;
            }
            Experiment::Logreg(p) => {
                positive("m", p.m)?;
                positive("n", p.n)?;
                positive("d", p.d)?;
                positive("test_samples", p.test_samples)?;
            }
            Experiment::GmmLearn(p) => {
                positive("m", p.m)?;
                positive("n", p.n)?;
                GaussianMixturePrior::new(p.prior.probs().to_vec(), p.prior.centers().to_vec(), p.prior.component_sds().to_vec())
                    .map_err(|e| config_err(format!("prior: {e}")))?;
            }
            Experiment::Adaped(_) | Experiment::DpAdaped(_) | Experiment::PanelCv(_) => {}
            Experiment::Accountant(p) => {
                p.accounting.validate().map_err(|e| config_err(format!("accounting: {e}")))?;
            }
        }
        Ok(())
    }

    /// SHA-256 of the serialized experiment and seed list. The output block
    /// is left out so the same experiment hashes the same wherever it is
    /// written.
    pub fn hash(&self) -> String {
        let canonical = ExperimentConfig { output: None, ..self.clone() };
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// One line per named preset.
pub fn preset_summaries() -> Vec<(&'static str, &'static str)> {
    let descriptions = [
        "linear regression, prior variance 0.01, noise variance 0.05, feature variance 0.05, mean ~ N(0, 0.1^2)",
        "Bernoulli estimation, three-spike prior on {1/4, 1/2, 3/4}, m=10000, n=14",
        "Gaussian estimation under local DP, m=10000, n=15, sd_theta=0.1, sd_x=0.5, eps0 in {0.5,1,2,4,8,100}",
        "AdaPeD step sizes 0.1/0.1/0.03 with psi_0 = 4",
    ];
    PRESET_NAMES.iter().copied().zip(descriptions).collect()
}

/// A ready-to-run config for a named preset.
pub fn preset_config(name: &str) -> Result<ExperimentConfig> {
    let experiment = match name {
        "paper-linreg" => Experiment::Linreg(LinregParams {
            m: 2000,
            n: 10,
            d: 50,
            population: LinregPreset::PAPER,
            gd: GdConfig { eta: 2e-4, iterations: 10_000, ..GdConfig::default() },
            init_sigma_x_sq: default_init_sigma_x_sq(),
        }),
        "paper-bern-3spike" => {
            let p = BernPreset::THREE_SPIKE;
            Experiment::Bern(BernParams { m: p.m, n: p.n, prior: p.prior, epsilon0: None })
        }
        "paper-dp-gauss" => {
            let p = DpGaussPreset::paper();
            Experiment::Gauss(GaussParams {
                m: p.m,
                n: p.n,
                d: 1,
                sigma_theta_sq: p.sigma_theta * p.sigma_theta,
                sigma_x_sq: p.sigma_x * p.sigma_x,
                mu: None,
                channels: p.epsilons.iter().map(|&e| ChannelSpec::GaussianLdp { epsilon0: e, delta: p.delta }).collect(),
                bound: None,
            })
        }
        "paper-fed" => Experiment::Adaped(AdapedParams {
            tasks: TaskSpec::default(),
            adaped: paper_fed(),
            fedavg: default_fedavg(),
        }),
        other => {
            return Err(config_err(format!("unknown preset `{other}`; expected one of {}", PRESET_NAMES.join(", "))))
        }
    };
    Ok(ExperimentConfig { experiment, seeds: vec![0, 1, 2, 3, 4], output: None })
}

/// Builds an accountant config from individual values.
pub fn accountant_config(accounting: AdapedAccounting, delta: f64) -> ExperimentConfig {
    ExperimentConfig {
        experiment: Experiment::Accountant(AccountantParams { accounting, delta }),
        seeds: vec![0],
        output: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GAUSS: &str = r#"{"kind":"gauss","params":{"m":10,"n":5,"d":2,"sigma_theta_sq":0.1,"sigma_x_sq":1.0},"seeds":[1,2]}"#;

    #[test]
    fn parses_minimal_config() {
        let c = ExperimentConfig::from_json(GAUSS).unwrap();
        assert_eq!(c.experiment.kind(), "gauss");
        assert_eq!(c.seeds, vec![1, 2]);
        assert!(c.output.is_none());
    }

    #[test]
    fn rejects_bad_documents() {
        let cases = [
            r#"{"kind":"gauss","params":{"m":10,"n":5,"d":2,"sigma_theta_sq":0.1,"sigma_x_sq":1.0},"seeds":[]}"#,
            r#"{"kind":"nope","params":{},"seeds":[1]}"#,
            r#"{"kind":"gauss","params":{"m":10,"n":5,"d":2,"sigma_theta_sq":0.1},"seeds":[1]}"#,
            r#"{"kind":"gauss","params":{"m":10,"n":5,"d":2,"sigma_theta_sq":0.1,"sigma_x_sq":1.0,"typo":1},"seeds":[1]}"#,
            r#"{"kind":"gauss","params":{"m":10,"n":5,"d":2,"sigma_theta_sq":0.1,"sigma_x_sq":1.0},"seeds":[1],"extra":0}"#,
            r#"{"kind":"gauss","params":{"m":10,"n":5,"d":2,"sigma_theta_sq":0.1,"sigma_x_sq":1.0,"mu":[1.0]},"seeds":[1]}"#,
            "[1, 2]",
        ];
        for case in cases {
            let err = ExperimentConfig::from_json(case).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{case}: {err}");
        }
    }

    #[test]
    fn every_preset_round_trips() {
        for (name, _) in preset_summaries() {
            let c = preset_config(name).unwrap();
            let text = serde_json::to_string(&c).unwrap();
            assert_eq!(ExperimentConfig::from_json(&text).unwrap(), c);
        }
        assert!(preset_config("paper-missing").is_err());
    }

    #[test]
    fn hash_ignores_output_only() {
        let mut c = ExperimentConfig::from_json(GAUSS).unwrap();
        let h = c.hash();
        c.output = Some(OutputSpec { path: "x.json".into(), format: Format::Csv });
        assert_eq!(c.hash(), h);
        c.seeds.push(3);
        assert_ne!(c.hash(), h);
    }
}
