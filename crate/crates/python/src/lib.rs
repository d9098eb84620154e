//! Python bindings: fleets, IC features, GP and GPRn models, the cross-cell
//! benchmark, the monitoring simulation and the self-test.

use std::path::PathBuf;

use nalgebra::DMatrix;
use pyo3::exceptions::{PyFileNotFoundError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use battery_prognostics::baselines::{cell_data, fit_regressor, ModelParams, RegressorSpec};
use battery_prognostics::cli::feature_correlations;
use battery_prognostics::data::{featurize_fleet, select_rows, write_fleet, CellHistory, LabeledSample, Target};
use battery_prognostics::ensemble::{self, train_gprn, GprnModel, MixturePrediction};
use battery_prognostics::eval::{enumerate_splits, evaluate as run_evaluate, SplitPlan};
use battery_prognostics::gp::{self, GpHyper, GpModel, DEFAULT_JITTER};
use battery_prognostics::ica::{self, IcaConfig, FEATURE_NAMES};
use battery_prognostics::monitoring::{compute_kpis, simulate as run_simulate, sweep_k, StrategyConfig};
use battery_prognostics::selftest::run_selftest;
use battery_prognostics::synth::SyntheticFleet;
use battery_prognostics::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::DatasetNotFound(_) => PyFileNotFoundError::new_err(e.to_string()),
        e if e.is_validation() => PyValueError::new_err(e.to_string()),
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for battery_prognostics::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn parse_target(target: &str) -> PyResult<Target> {
    match target.to_ascii_lowercase().as_str() {
        "soh" => Ok(Target::Soh),
        "rul" => Ok(Target::Rul),
        other => Err(PyValueError::new_err(format!(
            "target must be 'soh' or 'rul', got {other:?}"
        ))),
    }
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let d = rows.first().map_or(0, Vec::len);
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err(
            "inputs must be a non-empty rectangular list of rows",
        ));
    }
    Ok(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
}

/// A labelled, featurized fleet of cells.
#[pyclass(module = "battery_prognostics_py")]
pub struct Fleet {
    cells: Vec<CellHistory>,
    rows: Vec<LabeledSample>,
    strategy: StrategyConfig,
}

impl Fleet {
    fn build(mut cells: Vec<CellHistory>, soh_eol: f64) -> PyResult<Self> {
        let strategy = StrategyConfig {
            soh_eol,
            ..Default::default()
        };
        strategy.validate().py()?;
        for c in &mut cells {
            c.label(soh_eol).py()?;
        }
        let rows = featurize_fleet(&cells, &IcaConfig::default()).py()?;
        Ok(Self { cells, rows, strategy })
    }

    fn cell(&self, cell_id: &str) -> PyResult<&CellHistory> {
        self.cells
            .iter()
            .find(|c| c.cell_id == cell_id)
            .ok_or_else(|| PyValueError::new_err(format!("unknown cell {cell_id:?}")))
    }

    fn rows_for(&self, target: Target, cells: &[String]) -> Vec<LabeledSample> {
        select_rows(&self.rows, target)
            .into_iter()
            .filter(|r| cells.contains(&r.cell_id))
            .collect()
    }
}

#[pymethods]
impl Fleet {
    #[getter]
    fn cell_ids(&self) -> Vec<String> {
        self.cells.iter().map(|c| c.cell_id.clone()).collect()
    }

    /// Interpolated end-of-life cycle per cell.
    fn n_eol<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for c in &self.cells {
            d.set_item(&c.cell_id, c.n_eol)?;
        }
        Ok(d)
    }

    /// One dict per featurized diagnostic.
    fn features<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.rows
            .iter()
            .map(|r| {
                let d = PyDict::new(py);
                d.set_item("cell", &r.cell_id)?;
                d.set_item("cycle", r.cycle_number)?;
                d.set_item("soh", r.soh)?;
                d.set_item("rul", r.rul)?;
                for (name, v) in FEATURE_NAMES.iter().zip(r.features.to_array()) {
                    d.set_item(*name, v)?;
                }
                Ok(d)
            })
            .collect()
    }

    /// Rank correlation of each feature with the target over the fleet.
    #[pyo3(signature = (target = "soh"))]
    fn correlations(&self, target: &str) -> PyResult<Vec<f64>> {
        let t = parse_target(target)?;
        feature_correlations(&select_rows(&self.rows, t), t)
            .into_iter()
            .map(|r| r.py())
            .collect()
    }

    /// Voltage and IC (mAh/V) of one diagnostic.
    fn ic_curve(&self, cell_id: &str, cycle: u32) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let cell = self.cell(cell_id)?;
        let diag = cell
            .diagnostics
            .iter()
            .find(|d| d.cycle_number == cycle)
            .ok_or_else(|| PyValueError::new_err(format!("cell {cell_id} has no diagnostic at cycle {cycle}")))?;
        let curve = IcaConfig::default().curve_for(diag).py()?;
        Ok((curve.voltage_v, curve.ic_mah_per_v))
    }

    /// Writes the fleet in the canonical CSV layout.
    fn write(&self, dir: PathBuf) -> PyResult<Vec<PathBuf>> {
        write_fleet(&dir, &self.cells).py()
    }

    fn __len__(&self) -> usize {
        self.cells.len()
    }

    fn __repr__(&self) -> String {
        format!("Fleet({} cells, {} diagnostics)", self.cells.len(), self.rows.len())
    }
}

#[pyfunction]
#[pyo3(signature = (cells = 8, seed = 7, soh_eol = 0.8))]
fn synth_fleet(cells: usize, seed: u64, soh_eol: f64) -> PyResult<Fleet> {
    Fleet::build(SyntheticFleet::generate(cells, seed).py()?.cells, soh_eol)
}

#[pyfunction]
#[pyo3(signature = (path, soh_eol = 0.8))]
fn load_fleet(path: PathBuf, soh_eol: f64) -> PyResult<Fleet> {
    Fleet::build(battery_prognostics::data::load_fleet(&path).py()?, soh_eol)
}

/// Exact GP regression with an ARD squared-exponential kernel.
#[pyclass(module = "battery_prognostics_py")]
pub struct GaussianProcess {
    model: GpModel,
}

#[pymethods]
impl GaussianProcess {
    /// Fits with fixed hyperparameters (standardized units).
    #[staticmethod]
    #[pyo3(signature = (x, y, signal_var = 1.0, lengthscales = None, noise_var = 0.1))]
    fn fit(
        x: Vec<Vec<f64>>,
        y: Vec<f64>,
        signal_var: f64,
        lengthscales: Option<Vec<f64>>,
        noise_var: f64,
    ) -> PyResult<Self> {
        let x = matrix(&x)?;
        let l = lengthscales.unwrap_or_else(|| vec![1.0; x.ncols()]);
        let model = gp::fit_gp(&x, &y, &GpHyper::new(signal_var, &l, noise_var), DEFAULT_JITTER).py()?;
        Ok(Self { model })
    }

    /// Fits with hyperparameters from Adam on the marginal likelihood.
    #[staticmethod]
    #[pyo3(signature = (x, y, steps = 200, learn_rate = gp::DEFAULT_LEARN_RATE))]
    fn train(x: Vec<Vec<f64>>, y: Vec<f64>, steps: usize, learn_rate: f64) -> PyResult<Self> {
        let model = gp::train_gp(&matrix(&x)?, &y, steps, learn_rate).py()?;
        Ok(Self { model })
    }

    /// Predictive mean and variance at one input.
    fn predict(&self, x: Vec<f64>) -> PyResult<(f64, f64)> {
        let p = self.model.predict(&x).py()?;
        Ok((p.mean, p.variance))
    }

    fn log_marginal_likelihood(&self) -> f64 {
        self.model.log_marginal_likelihood()
    }

    /// Gradient with respect to `[log σ_f², log ℓ.., log σ_n²]`.
    fn lml_gradient(&self) -> Vec<f64> {
        self.model.lml_gradient()
    }

    #[getter]
    fn hyperparameters<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let h = &self.model.hyper;
        let d = PyDict::new(py);
        d.set_item("signal_var", h.signal_var())?;
        d.set_item("lengthscales", h.lengthscales())?;
        d.set_item("noise_var", h.noise_var())?;
        Ok(d)
    }
}

fn mixture_dict<'py>(py: Python<'py>, p: &MixturePrediction) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("mean", p.mean)?;
    d.set_item("variance", p.variance)?;
    d.set_item("epistemic", p.epistemic)?;
    d.set_item("aleatoric", p.aleatoric)?;
    d.set_item("expert_means", p.expert_means.clone())?;
    d.set_item("expert_vars", p.expert_vars.clone())?;
    Ok(d)
}

/// GPRn: one GP expert per training cell, combined as a uniform mixture.
#[pyclass(module = "battery_prognostics_py")]
pub struct Gprn {
    model: GprnModel,
}

#[pymethods]
impl Gprn {
    /// Trains on the RUL rows of `cells` (all cells when omitted).
    #[staticmethod]
    #[pyo3(signature = (fleet, epochs = 20, cells = None))]
    fn train(fleet: &Fleet, epochs: usize, cells: Option<Vec<String>>) -> PyResult<Self> {
        let cells = cells.unwrap_or_else(|| fleet.cell_ids());
        let rows = fleet.rows_for(Target::Rul, &cells);
        Ok(Self {
            model: train_gprn(&cell_data(&rows, Target::Rul), epochs).py()?,
        })
    }

    /// Mixture moments at a feature vector `[f1..f5]`.
    fn predict<'py>(&self, py: Python<'py>, features: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
        mixture_dict(py, &self.model.predict_mixture(&features).py()?)
    }

    #[getter]
    fn experts(&self) -> Vec<String> {
        self.model.experts.iter().map(|(c, _)| c.clone()).collect()
    }

    fn to_json(&self) -> PyResult<String> {
        self.model.to_json().py()
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            model: GprnModel::from_json(text).py()?,
        })
    }
}

#[pyfunction]
fn mixture_moments<'py>(
    py: Python<'py>,
    weights: Vec<f64>,
    means: Vec<f64>,
    vars: Vec<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    if weights.len() != means.len() || means.len() != vars.len() || weights.is_empty() {
        return Err(PyValueError::new_err(
            "weights, means and vars must be non-empty and equally long",
        ));
    }
    mixture_dict(py, &ensemble::mixture_moments(&weights, &means, &vars))
}

#[pyfunction]
fn spearman(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    ica::spearman(&x, &y).py()
}

/// Cross-cell benchmark of one model kind (`poly1d`, `polymulti`, `ffnn`,
/// `svr`, `gpr`, `gpr_loco`, `gprn`) with default parameters.
#[pyfunction]
#[pyo3(signature = (fleet, model, target = "soh", seed = 7))]
fn evaluate<'py>(py: Python<'py>, fleet: &Fleet, model: &str, target: &str, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let t = parse_target(target)?;
    let params: ModelParams = serde_json::from_value(serde_json::json!({ "kind": model }))
        .map_err(|e| PyValueError::new_err(format!("unknown model {model:?}: {e}")))?;
    let report = run_evaluate(&RegressorSpec::new(params, seed), &select_rows(&fleet.rows, t), t).py()?;
    let s = t.report_scale();
    let d = PyDict::new(py);
    d.set_item("model", &report.model)?;
    d.set_item("target", t.name())?;
    d.set_item("mae_train", report.mae_train * s)?;
    d.set_item("mae_test", report.mae_test * s)?;
    d.set_item("max_error_test", report.max_error_test * s)?;
    d.set_item("nmae_test", report.nmae_test)?;
    d.set_item("splits", report.splits.len())?;
    d.set_item("failed_splits", report.failures.len())?;
    Ok(d)
}

/// Monitors one cell with models trained on all other cells.
#[pyfunction]
#[pyo3(signature = (fleet, cell, k = 2.0, epochs = 20))]
fn simulate<'py>(py: Python<'py>, fleet: &Fleet, cell: &str, k: f64, epochs: usize) -> PyResult<Bound<'py, PyDict>> {
    let history = fleet.cell(cell)?;
    let cfg = StrategyConfig {
        k,
        epochs,
        ..fleet.strategy.clone()
    };
    cfg.validate().py()?;
    let others: Vec<String> = fleet.cell_ids().into_iter().filter(|c| c != cell).collect();
    let rul = train_gprn(&cell_data(&fleet.rows_for(Target::Rul, &others), Target::Rul), epochs).py()?;
    let soh_spec = RegressorSpec::new(ModelParams::Svr(Default::default()), 7);
    let soh = fit_regressor(&soh_spec, &fleet.rows_for(Target::Soh, &others), Target::Soh).py()?;
    let rows: Vec<LabeledSample> = fleet.rows.iter().filter(|r| r.cell_id == cell).cloned().collect();
    let trace = run_simulate(&rows, &rul, &soh, &cfg).py()?;
    let kpi = compute_kpis(&trace, history, cfg.soh_eol).py()?;

    let d = PyDict::new(py);
    d.set_item("cell", cell)?;
    d.set_item("k", k)?;
    d.set_item("stop_cycle", trace.stop_cycle)?;
    d.set_item("status", format!("{:?}", trace.status))?;
    let events: Vec<(f64, u32, f64, f64, f64, f64)> = trace
        .events
        .iter()
        .map(|e| {
            (
                e.operating_cycle,
                e.measured_cycle,
                e.rul_mean,
                e.rul_sigma,
                e.rul_cons,
                e.soh_est,
            )
        })
        .collect();
    d.set_item("events", events)?;
    d.set_item("utilization", kpi.utilization)?;
    d.set_item("steps", kpi.steps)?;
    d.set_item("overcycled", kpi.overcycled)?;
    d.set_item("delta_n_eol", kpi.delta_n_eol)?;
    d.set_item("delta_soh_eol", kpi.delta_soh_eol)?;
    Ok(d)
}

/// Fleet-mean KPIs over all 6-train/2-test splits for each k.
#[pyfunction]
#[pyo3(signature = (fleet, k_values, epochs = 20))]
fn sweep<'py>(py: Python<'py>, fleet: &Fleet, k_values: Vec<f64>, epochs: usize) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let plans: Vec<SplitPlan> = enumerate_splits(&fleet.cell_ids()).py()?;
    let cfg = StrategyConfig {
        epochs,
        ..fleet.strategy.clone()
    };
    let soh_spec = RegressorSpec::new(ModelParams::Svr(Default::default()), 7);
    let result = sweep_k(&fleet.cells, &fleet.rows, &plans, &k_values, &cfg, &soh_spec).py()?;
    result
        .by_k
        .iter()
        .map(|s| {
            let d = PyDict::new(py);
            d.set_item("k", s.k)?;
            d.set_item("runs", s.runs)?;
            d.set_item("U", s.utilization)?;
            d.set_item("M", s.steps)?;
            d.set_item("P_over", s.p_over)?;
            d.set_item("dN_eol", s.delta_n_eol)?;
            d.set_item("dSoH_eol", s.delta_soh_eol)?;
            Ok(d)
        })
        .collect()
}

/// `(name, passed, detail)` for every self-test check.
#[pyfunction]
#[pyo3(signature = (seed = 7))]
fn selftest(seed: u64) -> PyResult<Vec<(String, bool, String)>> {
    let report = run_selftest(seed).py()?;
    Ok(report
        .checks
        .into_iter()
        .map(|c| (c.name, c.passed, c.detail))
        .collect())
}

#[pymodule]
pub fn battery_prognostics_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("FEATURE_NAMES", FEATURE_NAMES.to_vec())?;
    m.add_class::<Fleet>()?;
    m.add_class::<GaussianProcess>()?;
    m.add_class::<Gprn>()?;
    m.add_function(wrap_pyfunction!(synth_fleet, m)?)?;
    m.add_function(wrap_pyfunction!(load_fleet, m)?)?;
    m.add_function(wrap_pyfunction!(mixture_moments, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(selftest, m)?)?;
    Ok(())
}
