//! Binary panels (units by rounds) and leave-one-round-out evaluation.

use std::path::Path;

use fedbayes_core::bern_est::all_moment_weights;
use fedbayes_core::metrics::{mean_and_stderr, MseEstimate};
use fedbayes_core::sampling::sample_bernoulli_population;
use fedbayes_core::{RngContract, ScalarPrior};
use serde::{Deserialize, Serialize};

use crate::error::{Context, HarnessError, Result};

/// Rectangular 0/1 table; `cells[unit][round]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinaryPanel {
    pub ids: Vec<String>,
    pub rounds: Vec<String>,
    pub cells: Vec<Vec<u8>>,
}

impl BinaryPanel {
    pub fn units(&self) -> usize {
        self.ids.len()
    }
    pub fn num_rounds(&self) -> usize {
        self.rounds.len()
    }

    /// Builds a panel from rows, checking shape and cell values.
    pub fn new(ids: Vec<String>, rounds: Vec<String>, cells: Vec<Vec<u8>>) -> Result<Self> {
        let err = |row: usize, column: usize, message: String| HarnessError::Panel {
            path: "<memory>".into(),
            row,
            column,
            message,
        };
        if ids.len() != cells.len() {
            return Err(err(0, 0, format!("{} ids for {} rows", ids.len(), cells.len())));
        }
        for (r, row) in cells.iter().enumerate() {
            if row.len() != rounds.len() {
                return Err(err(r + 1, row.len() + 1, format!("expected {} cells, found {}", rounds.len(), row.len())));
            }
            if let Some(c) = row.iter().position(|&v| v > 1) {
                return Err(err(r + 1, c + 2, format!("cell value {} is not 0 or 1", row[c])));
            }
        }
        Ok(Self { ids, rounds, cells })
    }
}

/// Parses CSV text with header `id,r1,...,rk`. `origin` names the source
/// in error messages; rows are counted from 1 after the header, columns
/// from 1.
pub fn parse_binary_panel(text: &str, origin: &str) -> Result<BinaryPanel> {
    let err = |row: usize, column: usize, message: String| HarnessError::Panel {
        path: origin.to_string(),
        row,
        column,
        message,
    };
    let mut reader = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| err(0, 0, e.to_string()))?.clone();
    if header.get(0) != Some("id") {
        return Err(err(0, 1, "header must start with `id`".into()));
    }
    let rounds: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    if rounds.is_empty() {
        return Err(err(0, 2, "panel has no rounds".into()));
    }
    let mut ids = Vec::new();
    let mut cells = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| err(row, 0, e.to_string()))?;
        if record.len() != header.len() {
            return Err(err(row, record.len(), format!("expected {} fields, found {}", header.len(), record.len())));
        }
        ids.push(record[0].to_string());
        let bits = record
            .iter()
            .enumerate()
            .skip(1)
            .map(|(c, v)| match v {
                "0" => Ok(0u8),
                "1" => Ok(1u8),
                other => Err(err(row, c + 1, format!("cell `{other}` is not 0 or 1"))),
            })
            .collect::<Result<Vec<_>>>()?;
        cells.push(bits);
    }
    if ids.is_empty() {
        return Err(err(1, 0, "panel has no units".into()));
    }
    BinaryPanel::new(ids, rounds, cells)
}

pub fn load_binary_panel(path: &Path) -> Result<BinaryPanel> {
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })?;
    parse_binary_panel(&text, &path.display().to_string())
}

/// Panel whose units have success probabilities drawn from `prior`.
pub fn synthetic_panel(units: usize, rounds: usize, prior: &ScalarPrior, rng: &RngContract) -> Result<BinaryPanel> {
    let ds = sample_bernoulli_population(prior, units, rounds, rng).context("sampling synthetic panel")?;
    let cells = ds.clients.iter().map(|c| c.x().column(0).iter().map(|&v| v as u8).collect()).collect();
    BinaryPanel::new(
        (0..units).map(|i| format!("u{i}")).collect(),
        (1..=rounds).map(|r| format!("r{r}")).collect(),
        cells,
    )
}

/// Per-unit averages over every round except `held_out`.
pub fn training_means(panel: &BinaryPanel, held_out: usize) -> Vec<f64> {
    let k = (panel.num_rounds() - 1) as f64;
    panel
        .cells
        .iter()
        .map(|row| row.iter().enumerate().filter(|&(r, _)| r != held_out).map(|(_, &v)| f64::from(v)).sum::<f64>() / k)
        .collect()
}

/// Predictions for one fold from training averages alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldPredictions {
    pub local: Vec<f64>,
    pub personalized: Vec<f64>,
    pub global: Vec<f64>,
}

pub fn fold_predictions(means: &[f64], rounds_used: usize) -> Result<FoldPredictions> {
    let moments = all_moment_weights(means, rounds_used).context("estimating panel moments")?;
    let personalized =
        means.iter().zip(&moments).map(|(&x, mo)| (mo.a_hat * x + (1.0 - mo.a_hat) * mo.mu_hat).clamp(0.0, 1.0)).collect();
    let pooled = means.iter().sum::<f64>() / means.len() as f64;
    Ok(FoldPredictions { local: means.to_vec(), personalized, global: vec![pooled; means.len()] })
}

/// Mean squared error against the held-out bits, per estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelCvResult {
    pub local: MseEstimate,
    pub personalized: MseEstimate,
    pub global: MseEstimate,
    /// `(held-out round, local MSE, personalized MSE)` for each fold.
    pub folds: Vec<(String, f64, f64)>,
}

/// Holds out each round in turn, predicts it from the others, and scores
/// `(prediction - bit)^2`. Standard errors are across units, each unit
/// contributing its average over folds.
pub fn panel_cv(panel: &BinaryPanel) -> Result<PanelCvResult> {
    let k = panel.num_rounds();
    if k < 2 {
        return Err(HarnessError::Config("leave-one-round-out needs at least 2 rounds".into()));
    }
    let units = panel.units();
    let mut per_unit = [vec![0.0; units], vec![0.0; units], vec![0.0; units]];
    let mut folds = Vec::with_capacity(k);
    for held in 0..k {
        let preds = fold_predictions(&training_means(panel, held), k - 1)?;
        let mut fold_sums = [0.0, 0.0];
        for (i, row) in panel.cells.iter().enumerate() {
            let bit = f64::from(row[held]);
            for (slot, p) in [&preds.local, &preds.personalized, &preds.global].iter().enumerate() {
                let e = (p[i] - bit).powi(2);
                per_unit[slot][i] += e / k as f64;
                if slot < 2 {
                    fold_sums[slot] += e / units as f64;
                }
            }
        }
        folds.push((panel.rounds[held].clone(), fold_sums[0], fold_sums[1]));
    }
    let [local, personalized, global] = per_unit.map(|v| mean_and_stderr(&v));
    Ok(PanelCvResult { local, personalized, global, folds })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel(rows: &[&[u8]]) -> BinaryPanel {
        let k = rows[0].len();
        BinaryPanel::new(
            (0..rows.len()).map(|i| i.to_string()).collect(),
            (1..=k).map(|r| format!("r{r}")).collect(),
            rows.iter().map(|r| r.to_vec()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn parses_and_reports_bad_cells() {
        let p = parse_binary_panel("id,r1,r2\na,1,0\nb,0,0\n", "t").unwrap();
        assert_eq!(p.ids, vec!["a", "b"]);
        assert_eq!(p.cells, vec![vec![1, 0], vec![0, 0]]);
        match parse_binary_panel("id,r1,r2\na,1,2\n", "t").unwrap_err() {
            HarnessError::Panel { row, column, .. } => assert_eq!((row, column), (1, 3)),
            other => panic!("{other}"),
        }
        match parse_binary_panel("id,r1,r2\na,1,0\nb,1\n", "t").unwrap_err() {
            HarnessError::Panel { row, .. } => assert_eq!(row, 2),
            other => panic!("{other}"),
        }
        assert!(parse_binary_panel("name,r1\na,1\n", "t").is_err());
    }

    #[test]
    fn all_ones_panel_is_predicted_exactly() {
        let p = panel(&[&[1, 1, 1], &[1, 1, 1], &[1, 1, 1], &[1, 1, 1]]);
        let cv = panel_cv(&p).unwrap();
        assert_eq!(cv.local.mse, 0.0);
        assert_eq!(cv.personalized.mse, 0.0);
    }

    #[test]
    fn two_round_folds_train_on_the_other_round() {
        let p = panel(&[&[1, 0], &[0, 0], &[1, 1], &[0, 1]]);
        assert_eq!(training_means(&p, 0), vec![0.0, 0.0, 1.0, 1.0]);
        assert_eq!(training_means(&p, 1), vec![1.0, 0.0, 1.0, 0.0]);
        assert_eq!(panel_cv(&p).unwrap().folds.len(), 2);
    }

    #[test]
    fn held_out_cells_do_not_reach_training() {
        let rng = RngContract::new(3);
        let base = synthetic_panel(30, 5, &ScalarPrior::Beta { alpha: 2.0, beta: 2.0 }, &rng).unwrap();
        for held in 0..5 {
            let mut flipped = base.clone();
            for row in &mut flipped.cells {
                row[held] = 1 - row[held];
            }
            assert_eq!(training_means(&base, held), training_means(&flipped, held));
            let a = fold_predictions(&training_means(&base, held), 4).unwrap();
            let b = fold_predictions(&training_means(&flipped, held), 4).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn single_round_is_rejected() {
        assert!(panel_cv(&panel(&[&[1], &[0], &[1]])).is_err());
    }
}
