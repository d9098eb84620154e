//! GPRn: one GP expert per training cell, combined as a uniform Gaussian
//! mixture.
//!
//! For expert moments `(m_i, s_i²)` and weights `π_i` the mixture has mean
//! `μ = Σ π_i m_i` and variance `Σ π_i s_i² + (Σ π_i m_i² - μ²)`. The first
//! term (average expert variance) is reported as epistemic uncertainty, the
//! second (spread of expert means) as aleatoric uncertainty.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::SplitPlan;
use crate::gp::{self, GpExport, GpModel};

pub const EXPORT_SCHEMA: &str = "gprn/1";

/// Per-cell training data: feature matrix (rows = samples) and targets.
pub type CellData = BTreeMap<String, (DMatrix<f64>, Vec<f64>)>;

#[derive(Debug, Clone)]
pub struct GprnModel {
    pub experts: Vec<(String, GpModel)>,
    pub weights: Vec<f64>,
    pub epochs_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePrediction {
    pub mean: f64,
    pub variance: f64,
    pub epistemic: f64,
    pub aleatoric: f64,
    pub expert_means: Vec<f64>,
    pub expert_vars: Vec<f64>,
}

impl MixturePrediction {
    pub fn std(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Moments of `Σ π_i N(m_i, s_i²)`.
pub fn mixture_moments(weights: &[f64], means: &[f64], vars: &[f64]) -> MixturePrediction {
    let mean: f64 = weights.iter().zip(means).map(|(w, m)| w * m).sum();
    let epistemic: f64 = weights.iter().zip(vars).map(|(w, v)| w * v).sum();
    // Centered form of Σ π m² - μ²; identical in exact arithmetic and never
    // negative in floating point.
    let aleatoric: f64 = weights
        .iter()
        .zip(means)
        .map(|(w, m)| w * (m - mean) * (m - mean))
        .sum();
    MixturePrediction {
        mean,
        variance: epistemic + aleatoric,
        epistemic,
        aleatoric,
        expert_means: means.to_vec(),
        expert_vars: vars.to_vec(),
    }
}

/// Trains one expert per cell with exactly `epochs` Adam steps each and
/// uniform weights.
pub fn train_gprn(per_cell_data: &CellData, epochs: usize) -> Result<GprnModel> {
    if per_cell_data.is_empty() {
        return Err(Error::Validation("GPRn needs at least one training cell".into()));
    }
    let mut experts = Vec::with_capacity(per_cell_data.len());
    for (cell, (x, y)) in per_cell_data {
        let train = || {
            if y.len() < 2 {
                return Err(Error::Validation(format!("only {} samples", y.len())));
            }
            gp::train_gp(x, y, epochs, gp::DEFAULT_LEARN_RATE)
        };
        let model = train().map_err(|e| Error::Training {
            cell: cell.clone(),
            source: Box::new(e),
        })?;
        experts.push((cell.clone(), model));
    }
    let t = experts.len();
    Ok(GprnModel {
        experts,
        weights: vec![1.0 / t as f64; t],
        epochs_used: epochs,
    })
}

impl GprnModel {
    pub fn predict_mixture(&self, x_star: &[f64]) -> Result<MixturePrediction> {
        let mut means = Vec::with_capacity(self.experts.len());
        let mut vars = Vec::with_capacity(self.experts.len());
        for (_, expert) in &self.experts {
            let p = expert.predict(x_star)?;
            means.push(p.mean);
            vars.push(p.variance);
        }
        Ok(mixture_moments(&self.weights, &means, &vars))
    }

    pub fn export(&self) -> GprnExport {
        GprnExport {
            schema: EXPORT_SCHEMA.to_string(),
            expert_variance_includes_noise: true,
            epochs_used: self.epochs_used,
            weights: self.weights.clone(),
            experts: self
                .experts
                .iter()
                .map(|(cell, m)| ExpertExport {
                    cell_id: cell.clone(),
                    model: GpExport::from(m),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.export())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<GprnExport>(text)?.into_model()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertExport {
    pub cell_id: String,
    pub model: GpExport,
}

/// Versioned text form of a trained ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GprnExport {
    pub schema: String,
    /// Expert variances are observation-level (latent + σ_n²).
    pub expert_variance_includes_noise: bool,
    pub epochs_used: usize,
    pub weights: Vec<f64>,
    pub experts: Vec<ExpertExport>,
}

impl GprnExport {
    pub fn into_model(self) -> Result<GprnModel> {
        if self.schema != EXPORT_SCHEMA {
            return Err(Error::Validation(format!(
                "unsupported GPRn schema {:?} (expected {EXPORT_SCHEMA:?})",
                self.schema
            )));
        }
        if self.experts.is_empty() || self.weights.len() != self.experts.len() {
            return Err(Error::Validation("GPRn export needs one weight per expert".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if self.weights.iter().any(|w| *w < 0.0) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::Validation(
                "GPRn weights must be non-negative and sum to 1".into(),
            ));
        }
        let experts = self
            .experts
            .into_iter()
            .map(|e| Ok((e.cell_id, e.model.into_model()?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(GprnModel {
            experts,
            weights: self.weights,
            epochs_used: self.epochs_used,
        })
    }
}

/// MAE of a GPRn trained on `train` cells, evaluated on the same cells' rows.
fn training_mae(data: &CellData, train: &[String], epochs: usize) -> Result<f64> {
    let subset: CellData = train
        .iter()
        .filter_map(|c| data.get(c).map(|d| (c.clone(), d.clone())))
        .collect();
    let model = train_gprn(&subset, epochs)?;
    let (mut sum, mut count) = (0.0, 0usize);
    for (x, y) in subset.values() {
        for (i, yi) in y.iter().enumerate() {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            sum += (model.predict_mixture(&row)?.mean - yi).abs();
            count += 1;
        }
    }
    Ok(sum / count.max(1) as f64)
}

/// Per-candidate training-data MAE averaged over the split plans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochScore {
    pub epochs: usize,
    pub train_mae: f64,
}

/// Scores every candidate epoch budget by the training-data MAE of GPRn
/// averaged over all splits. Returns the scores in candidate order.
pub fn score_epochs(data: &CellData, candidates: &[usize], splits: &[SplitPlan]) -> Result<Vec<EpochScore>> {
    candidates
        .iter()
        .map(|&epochs| {
            let maes = splits
                .iter()
                .map(|s| training_mae(data, &s.train_cells, epochs))
                .collect::<Result<Vec<_>>>()?;
            Ok(EpochScore {
                epochs,
                train_mae: maes.iter().sum::<f64>() / maes.len().max(1) as f64,
            })
        })
        .collect()
}

/// Candidate with minimal averaged training MAE; ties go to fewer epochs.
pub fn tune_epochs(data: &CellData, candidates: &[usize], splits: &[SplitPlan]) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::Validation("no epoch candidates".into()));
    }
    if candidates.len() == 1 {
        return Ok(candidates[0]);
    }
    let scores = score_epochs(data, candidates, splits)?;
    Ok(select_epochs(&scores))
}

pub fn select_epochs(scores: &[EpochScore]) -> usize {
    scores
        .iter()
        .min_by(|a, b| a.train_mae.total_cmp(&b.train_mae).then(a.epochs.cmp(&b.epochs)))
        .map(|s| s.epochs)
        .expect("at least one score")
}
