//! Cross-cell benchmark: every unordered pair of cells is held out once while
//! the remaining cells train the model.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::baselines::{fit_regressor, RegressorSpec};
use crate::data::{LabeledSample, Target};
use crate::error::{Error, Result};

pub const TEST_CELLS_PER_SPLIT: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub id: usize,
    pub train_cells: Vec<String>,
    pub test_cells: Vec<String>,
}

/// All `C(n, 2)` splits with two test cells, lexicographic in the sorted ids.
pub fn enumerate_splits(cell_ids: &[String]) -> Result<Vec<SplitPlan>> {
    let unique: BTreeSet<&String> = cell_ids.iter().collect();
    if unique.len() != cell_ids.len() {
        return Err(Error::Validation("duplicate cell ids".into()));
    }
    if cell_ids.len() < 3 {
        return Err(Error::Validation(format!(
            "need at least 3 cells for 2-cell test splits, got {}",
            cell_ids.len()
        )));
    }
    let ids: Vec<&String> = unique.into_iter().collect();
    let mut plans = Vec::new();
    for a in 0..ids.len() {
        for b in a + 1..ids.len() {
            plans.push(SplitPlan {
                id: plans.len(),
                train_cells: ids
                    .iter()
                    .enumerate()
                    .filter(|&(k, _)| k != a && k != b)
                    .map(|(_, c)| (*c).clone())
                    .collect(),
                test_cells: vec![ids[a].clone(), ids[b].clone()],
            });
        }
    }
    Ok(plans)
}

pub fn mae(predictions: &[f64], truths: &[f64]) -> f64 {
    if truths.is_empty() {
        return 0.0;
    }
    predictions.iter().zip(truths).map(|(p, t)| (p - t).abs()).sum::<f64>() / truths.len() as f64
}

pub fn max_abs_error(predictions: &[f64], truths: &[f64]) -> f64 {
    predictions
        .iter()
        .zip(truths)
        .map(|(p, t)| (p - t).abs())
        .fold(0.0, f64::max)
}

/// Mean absolute error divided by the range of the truths.
pub fn nmae(predictions: &[f64], truths: &[f64]) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(Error::Validation("predictions and truths differ in length".into()));
    }
    if truths.len() < 2 {
        return Err(Error::UndefinedMetric("NMAE needs at least two truths".into()));
    }
    let lo = truths.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = truths.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::UndefinedMetric("truths have zero range".into()));
    }
    Ok(mae(predictions, truths) / (hi - lo))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub cell_id: String,
    pub cycle_number: u32,
    pub truth: f64,
    pub prediction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub split_id: usize,
    pub test_cells: Vec<String>,
    pub mae_train: f64,
    pub mae_test: f64,
    pub max_error_test: f64,
    pub nmae_test: f64,
    pub test_predictions: Vec<Prediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFailure {
    pub split_id: usize,
    pub error: String,
}

/// Errors are in target units (SoH as a fraction, RUL in cycles).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub target: Target,
    pub splits: Vec<SplitMetrics>,
    pub failures: Vec<SplitFailure>,
    /// Mean over succeeded splits.
    pub mae_train: f64,
    pub mae_test: f64,
    /// Maximum over succeeded splits.
    pub max_error_test: f64,
    /// Mean of the per-split test NMAE over splits where it is defined.
    pub nmae_test: f64,
}

impl MetricsReport {
    fn aggregate(model: String, target: Target, mut splits: Vec<SplitMetrics>, failures: Vec<SplitFailure>) -> Self {
        splits.sort_by_key(|s| s.split_id);
        let n = splits.len().max(1) as f64;
        let mean = |f: fn(&SplitMetrics) -> f64| splits.iter().map(f).sum::<f64>() / n;
        Self {
            mae_train: mean(|s| s.mae_train),
            mae_test: mean(|s| s.mae_test),
            max_error_test: splits.iter().map(|s| s.max_error_test).fold(0.0, f64::max),
            nmae_test: {
                let defined: Vec<f64> = splits.iter().map(|s| s.nmae_test).filter(|v| v.is_finite()).collect();
                defined.iter().sum::<f64>() / defined.len().max(1) as f64
            },
            model,
            target,
            splits,
            failures,
        }
    }
}

/// Anything that can be trained on rows and predict a target from features.
pub trait Regressor {
    fn predict_row(&self, row: &LabeledSample) -> Result<f64>;
}

/// Runs one split: fits on the training cells and scores both sides.
pub fn evaluate_split<R: Regressor>(
    plan: &SplitPlan,
    rows: &[LabeledSample],
    target: Target,
    fit: impl Fn(&[LabeledSample]) -> Result<R>,
) -> Result<SplitMetrics> {
    let in_cells = |cells: &[String]| -> Vec<LabeledSample> {
        rows.iter().filter(|r| cells.contains(&r.cell_id)).cloned().collect()
    };
    let train = in_cells(&plan.train_cells);
    let test = in_cells(&plan.test_cells);
    let model = fit(&train)?;
    let score = |set: &[LabeledSample]| -> Result<(Vec<f64>, Vec<f64>)> {
        let preds = set.iter().map(|r| model.predict_row(r)).collect::<Result<Vec<_>>>()?;
        Ok((preds, set.iter().map(|r| target.value(r)).collect()))
    };
    let (train_pred, train_true) = score(&train)?;
    let (test_pred, test_true) = score(&test)?;
    Ok(SplitMetrics {
        split_id: plan.id,
        test_cells: plan.test_cells.clone(),
        mae_train: mae(&train_pred, &train_true),
        mae_test: mae(&test_pred, &test_true),
        max_error_test: max_abs_error(&test_pred, &test_true),
        nmae_test: nmae(&test_pred, &test_true).unwrap_or(f64::NAN),
        test_predictions: test
            .iter()
            .zip(test_pred.iter().zip(&test_true))
            .map(|(r, (p, t))| Prediction {
                cell_id: r.cell_id.clone(),
                cycle_number: r.cycle_number,
                truth: *t,
                prediction: *p,
            })
            .collect(),
    })
}

/// Benchmarks an arbitrary fit function over the given splits.
pub fn evaluate_with<R: Regressor>(
    model: &str,
    rows: &[LabeledSample],
    target: Target,
    plans: &[SplitPlan],
    fit: impl Fn(&[LabeledSample]) -> Result<R>,
) -> MetricsReport {
    let mut splits = Vec::new();
    let mut failures = Vec::new();
    for plan in plans {
        match evaluate_split(plan, rows, target, &fit) {
            Ok(m) => splits.push(m),
            Err(e) => {
                log::warn!("{model}: split {} failed: {e}", plan.id);
                failures.push(SplitFailure {
                    split_id: plan.id,
                    error: e.to_string(),
                });
            }
        }
    }
    MetricsReport::aggregate(model.to_string(), target, splits, failures)
}

/// Benchmarks one regressor spec over all 2-cell test splits of `rows`.
pub fn evaluate(spec: &RegressorSpec, rows: &[LabeledSample], target: Target) -> Result<MetricsReport> {
    let mut cells: Vec<String> = rows.iter().map(|r| r.cell_id.clone()).collect();
    cells.sort();
    cells.dedup();
    let plans = enumerate_splits(&cells)?;
    Ok(evaluate_with(spec.model.name(), rows, target, &plans, |train| {
        fit_regressor(spec, train, target)
    }))
}
