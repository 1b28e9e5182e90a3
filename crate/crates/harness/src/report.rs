//! Aggregated results and their JSON and CSV forms.

use std::io::Write;
use std::path::Path;

use fedbayes_core::learn::TrajectoryRow;
use fedbayes_core::metrics::{gain_pct, mean_and_sd};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Format};
use crate::error::{HarnessError, Result};

/// A value from one seed with its within-seed standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub value: f64,
    pub stderr: Option<f64>,
}

impl Measurement {
    pub fn exact(value: f64) -> Self {
        Self { value, stderr: None }
    }
    pub fn with_stderr(value: f64, stderr: f64) -> Self {
        Self { value, stderr: Some(stderr) }
    }
}

/// Everything one seed contributes to a report.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SeedOutcome {
    /// `(metric, estimator, measurement)`; `mse` rows drive the gains.
    pub values: Vec<(String, String, Measurement)>,
    pub trajectory: Vec<TrajectoryRow>,
    pub privacy: Option<PrivacyBudget>,
}

impl SeedOutcome {
    pub fn push(&mut self, metric: &str, estimator: &str, m: Measurement) {
        self.values.push((metric.to_string(), estimator.to_string(), m));
    }
}

/// Privacy guarantee of a run; `epsilon` is absent when the curve is unbounded.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: Option<f64>,
    pub delta: f64,
    pub alpha_star: Option<f64>,
    /// Linear RDP coefficient, when the curve is linear.
    pub rdp_coefficient: Option<f64>,
    pub rounds: usize,
    /// Set when the synchronization gap does not divide the iteration count.
    pub rounds_rounded_up: bool,
}

/// One cell of the metric-by-estimator table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub estimator: String,
    /// Mean over seeds.
    pub value: Option<f64>,
    /// Across seeds (sd / sqrt(seeds)) when there are several, otherwise
    /// the within-seed standard error.
    pub stderr: Option<f64>,
    /// Sample standard deviation across seeds.
    pub sd: Option<f64>,
    pub per_seed: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub kind: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub config: ExperimentConfig,
    /// Every metric for every estimator, metric-major.
    pub metrics: Vec<MetricRow>,
    pub trajectories: Vec<TrajectoryRow>,
    pub privacy: Option<PrivacyBudget>,
    pub wall_clock_secs: f64,
}

pub const GAIN_VS_LOCAL: &str = "gain_pct_vs_local";
pub const GAIN_VS_GLOBAL: &str = "gain_pct_vs_global";

fn first_seen(items: impl Iterator<Item = String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for item in items {
        if !out.contains(&item) {
            out.push(item);
        }
    }
    out
}

/// Combines per-seed outcomes into the full metric grid, adding the gain
/// rows when `mse` was measured. The trajectory and privacy entries come
/// from the first seed.
pub fn aggregate(config: &ExperimentConfig, outcomes: &[SeedOutcome], wall_clock_secs: f64) -> ExperimentReport {
    let all = || outcomes.iter().flat_map(|o| o.values.iter());
    let mut metrics = first_seen(all().map(|(m, _, _)| m.clone()));
    let estimators = first_seen(all().map(|(_, e, _)| e.clone()));
    let cell = |metric: &str, estimator: &str| -> MetricRow {
        let found: Vec<&Measurement> = outcomes
            .iter()
            .filter_map(|o| o.values.iter().find(|(m, e, _)| m == metric && e == estimator).map(|(_, _, v)| v))
            .collect();
        let per_seed: Vec<f64> = found.iter().map(|v| v.value).collect();
        let (value, stderr, sd) = match found.as_slice() {
            [] => (None, None, None),
            [only] => (Some(only.value), only.stderr, None),
            many => {
                let (mean, sd) = mean_and_sd(&per_seed);
                (Some(mean), Some(sd / (many.len() as f64).sqrt()), Some(sd))
            }
        };
        MetricRow { metric: metric.to_string(), estimator: estimator.to_string(), value, stderr, sd, per_seed }
    };
    let mut rows: Vec<MetricRow> =
        metrics.iter().flat_map(|m| estimators.iter().map(move |e| (m.clone(), e.clone()))).map(|(m, e)| cell(&m, &e)).collect();
    if metrics.iter().any(|m| m == "mse") {
        let mse_of = |e: &str| rows.iter().find(|r| r.metric == "mse" && r.estimator == e).and_then(|r| r.value);
        let gains: Vec<MetricRow> = [(GAIN_VS_LOCAL, "local"), (GAIN_VS_GLOBAL, "global")]
            .iter()
            .flat_map(|&(name, baseline)| {
                let base = mse_of(baseline);
                estimators.iter().map(move |e| (name, e, base))
            })
            .map(|(name, e, base)| MetricRow {
                metric: name.to_string(),
                estimator: e.clone(),
                value: match (mse_of(e), base) {
                    (Some(v), Some(b)) if b > 0.0 => Some(gain_pct(v, b)),
                    _ => None,
                },
                stderr: None,
                sd: None,
                per_seed: Vec::new(),
            })
            .collect();
        rows.extend(gains);
        metrics.push(GAIN_VS_LOCAL.into());
        metrics.push(GAIN_VS_GLOBAL.into());
    }
    ExperimentReport {
        kind: config.experiment.kind().to_string(),
        config_hash: config.hash(),
        seeds: config.seeds.clone(),
        config: config.clone(),
        metrics: rows,
        trajectories: outcomes.first().map(|o| o.trajectory.clone()).unwrap_or_default(),
        privacy: outcomes.first().and_then(|o| o.privacy),
        wall_clock_secs,
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Flat table `metric,estimator,value,stderr,sd` preceded by `#` lines
/// carrying the kind, config hash and seeds.
pub fn metrics_csv(report: &ExperimentReport) -> String {
    let seeds: Vec<String> = report.seeds.iter().map(u64::to_string).collect();
    let mut out = format!(
        "# kind: {}\n# config_hash: {}\n# seeds: {}\n",
        report.kind,
        report.config_hash,
        seeds.join(";")
    );
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(["metric", "estimator", "value", "stderr", "sd"]).expect("in-memory write");
    for r in &report.metrics {
        writer
            .write_record([r.metric.as_str(), r.estimator.as_str(), &fmt_opt(r.value), &fmt_opt(r.stderr), &fmt_opt(r.sd)])
            .expect("in-memory write");
    }
    out.push_str(&String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("utf-8"));
    out
}

pub fn render(report: &ExperimentReport, format: Format) -> String {
    match format {
        Format::Json => serde_json::to_string_pretty(report).expect("report serializes") + "\n",
        Format::Csv => metrics_csv(report),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

/// Writes the report to `path`. In CSV mode a non-empty trajectory goes to
/// a sibling `<stem>.trajectory.csv`.
pub fn emit_report(report: &ExperimentReport, format: Format, path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(io_err(path))?;
    file.write_all(render(report, format).as_bytes()).map_err(io_err(path))?;
    if format == Format::Csv && !report.trajectories.is_empty() {
        let side = path.with_extension("trajectory.csv");
        std::fs::write(&side, fedbayes_core::learn::trajectory_csv(&report.trajectories)).map_err(io_err(&side))?;
    }
    Ok(())
}
