//! Benchmark regressors behind one fit/predict contract.
//!
//! Every model standardizes its inputs with per-feature scalers fitted on the
//! training rows; all but the polynomials also standardize the target.

pub mod ffnn;
pub mod poly;
pub mod svr;

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{LabeledSample, Target};
use crate::ensemble::{train_gprn, CellData, GprnModel};
use crate::error::{Error, Result};
use crate::eval::Regressor;
use crate::gp::{self, GpHyper, GpModel, Scaler};
use crate::ica::FeatureVector;

use ffnn::Network;
use poly::{fit_poly, PolyBasis, PolyModel};
use svr::{solve_smo, SmoSettings};

pub const FEATURE_DIMS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Poly1dParams {
    pub degree: usize,
}

impl Default for Poly1dParams {
    fn default() -> Self {
        Self { degree: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolyMultiParams {
    pub degree: usize,
    /// Adds `x_i·x_j` for every pair of distinct inputs.
    pub interactions: bool,
    pub ridge: f64,
    /// Feature indices used as inputs (0 = F1).
    pub columns: Vec<usize>,
}

impl Default for PolyMultiParams {
    fn default() -> Self {
        Self {
            degree: 3,
            interactions: true,
            ridge: 1e-8,
            columns: (0..FEATURE_DIMS).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FfnnParams {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learn_rate: f64,
}

impl Default for FfnnParams {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            epochs: 1000,
            learn_rate: 1e-3,
        }
    }
}

/// Hand-tuned starting points; `epsilon` is in standardized target units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvrParams {
    pub c: f64,
    pub epsilon: f64,
    pub lengthscales: Vec<f64>,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SvrParams {
    fn default() -> Self {
        Self {
            c: 10.0,
            epsilon: 0.01,
            lengthscales: vec![1.0; FEATURE_DIMS],
            tolerance: 1e-3,
            max_iterations: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GprParams {
    pub epochs: usize,
    pub learn_rate: f64,
}

impl Default for GprParams {
    fn default() -> Self {
        Self {
            epochs: 200,
            learn_rate: gp::DEFAULT_LEARN_RATE,
        }
    }
}

/// Hyperparameter grid in standardized units; the lengthscale is shared
/// across features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocoGrid {
    pub signal_vars: Vec<f64>,
    pub lengthscales: Vec<f64>,
    pub noise_vars: Vec<f64>,
}

impl Default for LocoGrid {
    fn default() -> Self {
        Self {
            signal_vars: vec![0.5, 1.0, 2.0],
            lengthscales: vec![0.3, 1.0, 3.0],
            noise_vars: vec![1e-4, 1e-2, 1e-1],
        }
    }
}

impl LocoGrid {
    pub fn candidates(&self, dims: usize) -> Vec<GpHyper> {
        let mut out = Vec::new();
        for &sf2 in &self.signal_vars {
            for &l in &self.lengthscales {
                for &sn2 in &self.noise_vars {
                    out.push(GpHyper::new(sf2, &vec![l; dims], sn2));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GprnParams {
    pub epochs: usize,
}

impl Default for GprnParams {
    fn default() -> Self {
        Self { epochs: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelParams {
    Poly1d(Poly1dParams),
    Polymulti(PolyMultiParams),
    Ffnn(FfnnParams),
    Svr(SvrParams),
    Gpr(GprParams),
    GprLoco(LocoGrid),
    Gprn(GprnParams),
}

impl ModelParams {
    pub fn name(&self) -> &'static str {
        match self {
            ModelParams::Poly1d(_) => "Poly1D",
            ModelParams::Polymulti(_) => "PolyMulti",
            ModelParams::Ffnn(_) => "FFNN",
            ModelParams::Svr(_) => "SVR",
            ModelParams::Gpr(_) => "GPR",
            ModelParams::GprLoco(_) => "GPR_LOCO",
            ModelParams::Gprn(_) => "GPRn",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(format!("{}: {msg}", self.name())));
        let positive = |v: &[f64]| v.iter().all(|x| x.is_finite() && *x > 0.0);
        match self {
            ModelParams::Poly1d(p) if p.degree == 0 => bad("degree must be ≥ 1".into()),
            ModelParams::Polymulti(p) if p.degree == 0 || p.columns.is_empty() => {
                bad("degree and column list must be non-empty".into())
            }
            ModelParams::Polymulti(p) if p.columns.iter().any(|&c| c >= FEATURE_DIMS) => {
                bad(format!("feature columns must be < {FEATURE_DIMS}"))
            }
            ModelParams::Polymulti(p) if !(p.ridge >= 0.0 && p.ridge.is_finite()) => {
                bad("ridge must be non-negative".into())
            }
            ModelParams::Ffnn(p) if p.hidden.is_empty() || p.hidden.contains(&0) => {
                bad("hidden layers must be non-empty".into())
            }
            ModelParams::Ffnn(p) if !positive(&[p.learn_rate]) => bad("learn_rate must be positive".into()),
            ModelParams::Svr(p) if !positive(&[p.c, p.epsilon, p.tolerance]) => {
                bad("C, epsilon and tolerance must be positive".into())
            }
            ModelParams::Svr(p) if p.lengthscales.len() != FEATURE_DIMS || !positive(&p.lengthscales) => {
                bad(format!("need {FEATURE_DIMS} positive lengthscales"))
            }
            ModelParams::Gpr(p) if !positive(&[p.learn_rate]) => bad("learn_rate must be positive".into()),
            ModelParams::GprLoco(g)
                if g.signal_vars.is_empty() || g.lengthscales.is_empty() || g.noise_vars.is_empty() =>
            {
                bad("empty hyperparameter grid".into())
            }
            ModelParams::GprLoco(g)
                if !positive(&g.signal_vars) || !positive(&g.lengthscales) || !positive(&g.noise_vars) =>
            {
                bad("grid values must be positive".into())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressorSpec {
    pub model: ModelParams,
    #[serde(default)]
    pub seed: u64,
}

impl RegressorSpec {
    pub fn new(model: ModelParams, seed: u64) -> Self {
        Self { model, seed }
    }

    /// The seven benchmark models with default settings, in table order.
    pub fn benchmark_suite(seed: u64) -> Vec<Self> {
        [
            ModelParams::Poly1d(Default::default()),
            ModelParams::Polymulti(Default::default()),
            ModelParams::Ffnn(Default::default()),
            ModelParams::Svr(Default::default()),
            ModelParams::Gpr(Default::default()),
            ModelParams::GprLoco(Default::default()),
            ModelParams::Gprn(Default::default()),
        ]
        .into_iter()
        .map(|m| Self::new(m, seed))
        .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SvrModel {
    pub support: Vec<Vec<f64>>,
    pub coef: Vec<f64>,
    pub bias: f64,
    pub lengthscales: Vec<f64>,
    pub feature_scalers: Vec<Scaler>,
    pub target_scaler: Scaler,
}

impl SvrModel {
    fn predict(&self, x: &[f64]) -> f64 {
        let z: Vec<f64> = x.iter().zip(&self.feature_scalers).map(|(v, s)| s.apply(*v)).collect();
        let f: f64 = self
            .support
            .iter()
            .zip(&self.coef)
            .map(|(sv, c)| c * ard_kernel(sv, &z, &self.lengthscales))
            .sum::<f64>()
            + self.bias;
        self.target_scaler.invert(f)
    }
}

#[derive(Debug, Clone)]
pub struct FfnnModel {
    pub network: Network,
    pub feature_scalers: Vec<Scaler>,
    pub target_scaler: Scaler,
}

#[derive(Debug, Clone)]
pub enum FittedModel {
    Poly(PolyModel),
    Ffnn(FfnnModel),
    Svr(SvrModel),
    Gp(GpModel),
    Gprn(GprnModel),
}

#[derive(Debug, Clone)]
pub struct FittedRegressor {
    pub spec: RegressorSpec,
    pub target: Target,
    pub model: FittedModel,
}

impl FittedRegressor {
    pub fn predict(&self, features: &FeatureVector) -> Result<f64> {
        let x = features.to_array();
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Validation(format!("non-finite features {x:?}")));
        }
        Ok(match &self.model {
            FittedModel::Poly(m) => m.predict(&x),
            FittedModel::Ffnn(m) => {
                let z: Vec<f64> = x.iter().zip(&m.feature_scalers).map(|(v, s)| s.apply(*v)).collect();
                m.target_scaler.invert(m.network.predict(&z))
            }
            FittedModel::Svr(m) => m.predict(&x),
            FittedModel::Gp(m) => m.predict(&x)?.mean,
            FittedModel::Gprn(m) => m.predict_mixture(&x)?.mean,
        })
    }
}

impl Regressor for FittedRegressor {
    fn predict_row(&self, row: &LabeledSample) -> Result<f64> {
        self.predict(&row.features)
    }
}

fn ard_kernel(a: &[f64], b: &[f64], ls: &[f64]) -> f64 {
    let r2: f64 = a.iter().zip(b).zip(ls).map(|((x, y), l)| ((x - y) / l).powi(2)).sum();
    (-0.5 * r2).exp()
}

pub fn feature_matrix(rows: &[LabeledSample]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), FEATURE_DIMS, |i, j| rows[i].features.to_array()[j])
}

fn targets(rows: &[LabeledSample], target: Target) -> Vec<f64> {
    rows.iter().map(|r| target.value(r)).collect()
}

/// Rows grouped per cell as GP training arrays.
pub fn cell_data(rows: &[LabeledSample], target: Target) -> CellData {
    let mut grouped: BTreeMap<String, Vec<LabeledSample>> = BTreeMap::new();
    for r in rows {
        grouped.entry(r.cell_id.clone()).or_default().push(r.clone());
    }
    grouped
        .into_iter()
        .map(|(cell, rs)| {
            let x = feature_matrix(&rs);
            (cell, (x, targets(&rs, target)))
        })
        .collect()
}

fn standardized(x: &DMatrix<f64>, y: &[f64]) -> (DMatrix<f64>, Vec<f64>, Vec<Scaler>, Scaler) {
    let fs = gp::fit_column_scalers(x);
    let ts = Scaler::fit(y.iter().copied());
    (
        gp::apply_scalers(x, &fs),
        y.iter().map(|v| ts.apply(*v)).collect(),
        fs,
        ts,
    )
}

pub fn fit_svr(x: &DMatrix<f64>, y: &[f64], p: &SvrParams) -> Result<SvrModel> {
    if y.len() < 2 {
        return Err(Error::Validation(format!("SVR needs ≥ 2 samples, got {}", y.len())));
    }
    let (z, t, fs, ts) = standardized(x, y);
    let rows: Vec<Vec<f64>> = (0..z.nrows()).map(|i| z.row(i).iter().copied().collect()).collect();
    let gram: Vec<Vec<f64>> = rows
        .iter()
        .map(|a| rows.iter().map(|b| ard_kernel(a, b, &p.lengthscales)).collect())
        .collect();
    let settings = SmoSettings {
        c: p.c,
        epsilon: p.epsilon,
        tolerance: p.tolerance,
        max_iterations: p.max_iterations,
    };
    let sol = solve_smo(&gram, &t, &settings)?;
    let keep: Vec<usize> = (0..rows.len()).filter(|&i| sol.coef[i] != 0.0).collect();
    Ok(SvrModel {
        support: keep.iter().map(|&i| rows[i].clone()).collect(),
        coef: keep.iter().map(|&i| sol.coef[i]).collect(),
        bias: sol.bias,
        lengthscales: p.lengthscales.clone(),
        feature_scalers: fs,
        target_scaler: ts,
    })
}

pub fn fit_ffnn(x: &DMatrix<f64>, y: &[f64], p: &FfnnParams, seed: u64) -> Result<FfnnModel> {
    let (z, t, fs, ts) = standardized(x, y);
    Ok(FfnnModel {
        network: ffnn::train_network(&z, &t, &p.hidden, p.epochs, p.learn_rate, seed)?,
        feature_scalers: fs,
        target_scaler: ts,
    })
}

/// Leave-one-cell-out MAE of every grid candidate, in grid order.
pub fn loco_scores(data: &CellData, grid: &LocoGrid) -> Result<Vec<(GpHyper, f64)>> {
    if data.len() < 2 {
        return Err(Error::Validation("GPR_LOCO needs at least 2 training cells".into()));
    }
    let dims = data.values().next().map(|(x, _)| x.ncols()).unwrap_or(FEATURE_DIMS);
    let mut out = Vec::new();
    for hyper in grid.candidates(dims) {
        let mut maes = Vec::with_capacity(data.len());
        for held in data.keys() {
            let (xs, ys): (Vec<_>, Vec<_>) = data.iter().filter(|(c, _)| *c != held).map(|(_, d)| d).cloned().unzip();
            let (x, y) = stack(&xs, &ys);
            let score = gp::fit_gp(&x, &y, &hyper, gp::DEFAULT_JITTER).and_then(|m| {
                let (hx, hy) = &data[held];
                let mut sum = 0.0;
                for i in 0..hy.len() {
                    let row: Vec<f64> = hx.row(i).iter().copied().collect();
                    sum += (m.predict(&row)?.mean - hy[i]).abs();
                }
                Ok(sum / hy.len().max(1) as f64)
            });
            match score {
                Ok(v) => maes.push(v),
                Err(e) => {
                    log::warn!("GPR_LOCO candidate {hyper:?} failed on holdout {held}: {e}");
                    maes.push(f64::INFINITY);
                }
            }
        }
        out.push((hyper, maes.iter().sum::<f64>() / maes.len() as f64));
    }
    Ok(out)
}

fn stack(xs: &[DMatrix<f64>], ys: &[Vec<f64>]) -> (DMatrix<f64>, Vec<f64>) {
    let n: usize = ys.iter().map(Vec::len).sum();
    let d = xs.first().map(|x| x.ncols()).unwrap_or(0);
    let mut x = DMatrix::zeros(n, d);
    let mut r = 0;
    for m in xs {
        x.rows_mut(r, m.nrows()).copy_from(m);
        r += m.nrows();
    }
    (x, ys.concat())
}

/// Picks the grid point with the lowest LOCO MAE (first on ties) and refits on
/// all cells.
pub fn fit_gpr_loco(data: &CellData, grid: &LocoGrid) -> Result<GpModel> {
    let scores = loco_scores(data, grid)?;
    let (best, mae) = scores
        .into_iter()
        .fold(None::<(GpHyper, f64)>, |acc, (h, s)| match acc {
            Some((_, bs)) if bs <= s => acc,
            _ => Some((h, s)),
        })
        .ok_or_else(|| Error::Validation("empty GPR_LOCO grid".into()))?;
    if !mae.is_finite() {
        return Err(Error::Fit("every GPR_LOCO candidate failed".into()));
    }
    let (xs, ys): (Vec<_>, Vec<_>) = data.values().cloned().unzip();
    let (x, y) = stack(&xs, &ys);
    gp::fit_gp(&x, &y, &best, gp::DEFAULT_JITTER)
}

/// Fits `spec` on `rows` for `target`.
pub fn fit_regressor(spec: &RegressorSpec, rows: &[LabeledSample], target: Target) -> Result<FittedRegressor> {
    spec.model.validate()?;
    if rows.is_empty() {
        return Err(Error::Validation("no training rows".into()));
    }
    let x = feature_matrix(rows);
    let y = targets(rows, target);
    let model = match &spec.model {
        ModelParams::Poly1d(p) => {
            let inputs: Vec<Vec<f64>> = rows.iter().map(|r| r.features.to_array().to_vec()).collect();
            let basis = PolyBasis {
                degree: p.degree,
                interactions: false,
            };
            FittedModel::Poly(fit_poly(&inputs, &y, &[0], basis, 0.0)?)
        }
        ModelParams::Polymulti(p) => {
            let inputs: Vec<Vec<f64>> = rows.iter().map(|r| r.features.to_array().to_vec()).collect();
            let basis = PolyBasis {
                degree: p.degree,
                interactions: p.interactions,
            };
            FittedModel::Poly(fit_poly(&inputs, &y, &p.columns, basis, p.ridge)?)
        }
        ModelParams::Ffnn(p) => FittedModel::Ffnn(fit_ffnn(&x, &y, p, spec.seed)?),
        ModelParams::Svr(p) => FittedModel::Svr(fit_svr(&x, &y, p)?),
        ModelParams::Gpr(p) => FittedModel::Gp(gp::train_gp(&x, &y, p.epochs, p.learn_rate)?),
        ModelParams::GprLoco(g) => FittedModel::Gp(fit_gpr_loco(&cell_data(rows, target), g)?),
        ModelParams::Gprn(p) => FittedModel::Gprn(train_gprn(&cell_data(rows, target), p.epochs)?),
    };
    Ok(FittedRegressor {
        spec: spec.clone(),
        target,
        model,
    })
}
