//! Exact Gaussian-process regression with an ARD squared-exponential kernel.
//!
//! Inputs and targets are standardized per dimension before fitting; all
//! hyperparameters live in log space and refer to the standardized problem.
//! Predictions are returned in raw target units.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_JITTER: f64 = 1e-8;
const MAX_JITTER: f64 = 1e-2;
pub const DEFAULT_LEARN_RATE: f64 = 0.05;
const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Log-space hyperparameters `{log σ_f², log ℓ_1..ℓ_d, log σ_n²}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub log_signal_var: f64,
    pub log_lengthscales: Vec<f64>,
    pub log_noise_var: f64,
}

impl GpHyper {
    /// Neutral start on standardized data: unit signal variance and
    /// lengthscales, noise variance e⁻².
    pub fn initial(dims: usize) -> Self {
        Self {
            log_signal_var: 0.0,
            log_lengthscales: vec![0.0; dims],
            log_noise_var: -2.0,
        }
    }

    pub fn new(signal_var: f64, lengthscales: &[f64], noise_var: f64) -> Self {
        Self {
            log_signal_var: signal_var.ln(),
            log_lengthscales: lengthscales.iter().map(|l| l.ln()).collect(),
            log_noise_var: noise_var.ln(),
        }
    }

    pub fn dims(&self) -> usize {
        self.log_lengthscales.len()
    }

    pub fn signal_var(&self) -> f64 {
        self.log_signal_var.exp()
    }

    pub fn noise_var(&self) -> f64 {
        self.log_noise_var.exp()
    }

    pub fn lengthscales(&self) -> Vec<f64> {
        self.log_lengthscales.iter().map(|l| l.exp()).collect()
    }

    /// Flat parameter vector `[log σ_f², log ℓ.., log σ_n²]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dims() + 2);
        v.push(self.log_signal_var);
        v.extend_from_slice(&self.log_lengthscales);
        v.push(self.log_noise_var);
        v
    }

    pub fn from_slice(p: &[f64]) -> Self {
        let d = p.len() - 2;
        Self {
            log_signal_var: p[0],
            log_lengthscales: p[1..=d].to_vec(),
            log_noise_var: p[d + 1],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.to_vec().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Validation(format!("non-finite hyperparameters {self:?}")))
        }
    }
}

/// Mean/std pair used to standardize one column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: f64,
    pub std: f64,
}

impl Scaler {
    /// Population mean/std; a zero spread falls back to unit std.
    pub fn fit(values: impl Iterator<Item = f64> + Clone) -> Self {
        let n = values.clone().count().max(1) as f64;
        let mean = values.clone().sum::<f64>() / n;
        let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        if std > 1e-12 * mean.abs().max(1.0) {
            Self { mean, std }
        } else {
            Self { mean, std: 1.0 }
        }
    }

    pub fn identity() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn invert(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}

/// Per-column scalers for a row-major `n × d` input matrix.
pub fn fit_column_scalers(x: &DMatrix<f64>) -> Vec<Scaler> {
    (0..x.ncols())
        .map(|j| {
            let s = Scaler::fit(x.column(j).iter().copied());
            if s.std == 1.0 && x.nrows() > 1 && x.column(j).iter().all(|&v| v == x[(0, j)]) {
                log::warn!("feature {j} has zero variance; using unit scale");
            }
            s
        })
        .collect()
}

pub fn apply_scalers(x: &DMatrix<f64>, scalers: &[Scaler]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| scalers[j].apply(x[(i, j)]))
}

/// ARD squared-exponential kernel `σ_f² exp(-½ Σ (a_j - b_j)² / ℓ_j²)`.
pub fn kernel_rbf_ard(a: &[f64], b: &[f64], hyper: &GpHyper) -> Result<f64> {
    if a.len() != hyper.dims() || b.len() != hyper.dims() {
        return Err(Error::Validation(format!(
            "kernel inputs of dimension {} and {} for {}-dimensional hyperparameters",
            a.len(),
            b.len(),
            hyper.dims()
        )));
    }
    let ls = hyper.lengthscales();
    Ok(rbf(a.iter().copied(), b.iter().copied(), &ls, hyper.signal_var()))
}

fn rbf(a: impl Iterator<Item = f64>, b: impl Iterator<Item = f64>, ls: &[f64], signal_var: f64) -> f64 {
    let r2: f64 = a
        .zip(b)
        .zip(ls)
        .map(|((x, y), l)| {
            let d = (x - y) / l;
            d * d
        })
        .sum();
    signal_var * (-0.5 * r2).exp()
}

/// Noise-free Gram matrix on standardized inputs.
fn gram(x: &DMatrix<f64>, hyper: &GpHyper) -> DMatrix<f64> {
    let n = x.nrows();
    let ls = hyper.lengthscales();
    let sf2 = hyper.signal_var();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = sf2;
        for j in 0..i {
            let v = rbf(x.row(i).iter().copied(), x.row(j).iter().copied(), &ls, sf2);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Cholesky of `K + σ_n² I + jitter I` with ×10 jitter escalation.
fn factorize(k: &DMatrix<f64>, noise_var: f64, jitter: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let mut jitter = jitter;
    loop {
        let mut reg = k.clone();
        for i in 0..reg.nrows() {
            reg[(i, i)] += noise_var + jitter;
        }
        if let Some(chol) = reg.cholesky() {
            return Ok((chol, jitter));
        }
        if jitter * 10.0 > MAX_JITTER * (1.0 + 1e-9) {
            return Err(Error::Numerical(format!(
                "Cholesky factorization failed at jitter {jitter:e}"
            )));
        }
        jitter = if jitter > 0.0 { jitter * 10.0 } else { DEFAULT_JITTER };
    }
}

/// A fitted GP expert. Training data are stored standardized.
#[derive(Debug, Clone)]
pub struct GpModel {
    pub train_inputs: DMatrix<f64>,
    pub train_targets: DVector<f64>,
    pub feature_scaler: Vec<Scaler>,
    pub target_scaler: Scaler,
    pub hyper: GpHyper,
    /// Jitter actually added to the diagonal.
    pub jitter: f64,
    chol: Cholesky<f64, Dyn>,
    kernel: DMatrix<f64>,
    pub alpha: DVector<f64>,
}

/// Posterior predictive moments in target units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDistribution {
    pub mean: f64,
    /// Variance of a new observation (latent variance plus σ_n²).
    pub variance: f64,
}

impl GpModel {
    pub fn n_train(&self) -> usize {
        self.train_inputs.nrows()
    }

    /// Lower-triangular factor `L` with `L Lᵀ = K + σ_n² I + jitter I`.
    pub fn chol_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// `K + σ_n² I + jitter I` on the standardized inputs.
    pub fn regularized_gram(&self) -> DMatrix<f64> {
        let mut k = self.kernel.clone();
        for i in 0..k.nrows() {
            k[(i, i)] += self.hyper.noise_var() + self.jitter;
        }
        k
    }

    pub fn standardize_input(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.feature_scaler).map(|(v, s)| s.apply(*v)).collect()
    }

    /// Mean and variance in standardized target units.
    pub fn predict_standardized(&self, z: &[f64]) -> (f64, f64) {
        let ls = self.hyper.lengthscales();
        let sf2 = self.hyper.signal_var();
        let k_star = DVector::from_iterator(
            self.n_train(),
            (0..self.n_train()).map(|i| rbf(self.train_inputs.row(i).iter().copied(), z.iter().copied(), &ls, sf2)),
        );
        let mean = k_star.dot(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&k_star)
            .expect("Cholesky factor has a positive diagonal");
        let latent = (sf2 - v.norm_squared()).max(0.0);
        (mean, latent + self.hyper.noise_var())
    }

    pub fn predict(&self, x_star: &[f64]) -> Result<PredictiveDistribution> {
        if x_star.len() != self.hyper.dims() {
            return Err(Error::Validation(format!(
                "input of dimension {} for a {}-dimensional model",
                x_star.len(),
                self.hyper.dims()
            )));
        }
        if !x_star.iter().all(|v| v.is_finite()) {
            return Err(Error::Validation(format!("non-finite prediction input {x_star:?}")));
        }
        let (m, v) = self.predict_standardized(&self.standardize_input(x_star));
        let s = self.target_scaler;
        Ok(PredictiveDistribution {
            mean: s.invert(m),
            variance: v * s.std * s.std,
        })
    }

    /// `-½ yᵀα - Σ log L_ii - (n/2) log 2π` on standardized targets.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.n_train() as f64;
        let log_det_half: f64 = self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
        -0.5 * self.train_targets.dot(&self.alpha) - log_det_half - 0.5 * n * LN_2PI
    }

    /// Gradient of the LML with respect to `[log σ_f², log ℓ.., log σ_n²]`:
    /// `½ tr((ααᵀ - K⁻¹) ∂K/∂θ)`.
    pub fn lml_gradient(&self) -> Vec<f64> {
        let n = self.n_train();
        let d = self.hyper.dims();
        let k_inv = self.chol.inverse();
        let ls = self.hyper.lengthscales();
        let mut grad = vec![0.0; d + 2];
        for i in 0..n {
            for j in 0..n {
                let w = self.alpha[i] * self.alpha[j] - k_inv[(i, j)];
                let wk = w * self.kernel[(i, j)];
                grad[0] += wk;
                if i != j {
                    for (dim, l) in ls.iter().enumerate() {
                        let diff = (self.train_inputs[(i, dim)] - self.train_inputs[(j, dim)]) / l;
                        grad[1 + dim] += wk * diff * diff;
                    }
                }
            }
            grad[d + 1] += self.alpha[i] * self.alpha[i] - k_inv[(i, i)];
        }
        grad[d + 1] *= self.hyper.noise_var();
        grad.iter_mut().for_each(|g| *g *= 0.5);
        grad
    }

    /// Rebuilds the posterior on the same standardized data with new
    /// hyperparameters.
    pub fn refit(&self, hyper: GpHyper, jitter: f64) -> Result<GpModel> {
        posterior(
            self.train_inputs.clone(),
            self.train_targets.clone(),
            self.feature_scaler.clone(),
            self.target_scaler,
            hyper,
            jitter,
        )
    }

    /// Training data in raw units, for export.
    pub fn raw_training_data(&self) -> (DMatrix<f64>, Vec<f64>) {
        let x = DMatrix::from_fn(self.train_inputs.nrows(), self.train_inputs.ncols(), |i, j| {
            self.feature_scaler[j].invert(self.train_inputs[(i, j)])
        });
        let y = self
            .train_targets
            .iter()
            .map(|v| self.target_scaler.invert(*v))
            .collect();
        (x, y)
    }
}

fn posterior(
    train_inputs: DMatrix<f64>,
    train_targets: DVector<f64>,
    feature_scaler: Vec<Scaler>,
    target_scaler: Scaler,
    hyper: GpHyper,
    jitter: f64,
) -> Result<GpModel> {
    hyper.validate()?;
    let kernel = gram(&train_inputs, &hyper);
    let (chol, jitter) = factorize(&kernel, hyper.noise_var(), jitter)?;
    let alpha = chol.solve(&train_targets);
    Ok(GpModel {
        train_inputs,
        train_targets,
        feature_scaler,
        target_scaler,
        hyper,
        jitter,
        chol,
        kernel,
        alpha,
    })
}

fn check_training_data(x: &DMatrix<f64>, y: &[f64], hyper: &GpHyper) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::Validation("GP needs at least one training point".into()));
    }
    if x.nrows() != y.len() {
        return Err(Error::Validation(format!(
            "{} inputs but {} targets",
            x.nrows(),
            y.len()
        )));
    }
    if x.ncols() != hyper.dims() {
        return Err(Error::Validation(format!(
            "{}-dimensional inputs for {}-dimensional hyperparameters",
            x.ncols(),
            hyper.dims()
        )));
    }
    if !x.iter().chain(y).all(|v| v.is_finite()) {
        return Err(Error::Validation("non-finite training data".into()));
    }
    Ok(())
}

/// Standardizes `(x, y)` and factorizes the regularized Gram matrix.
pub fn fit_gp(x: &DMatrix<f64>, y: &[f64], hyper: &GpHyper, jitter: f64) -> Result<GpModel> {
    check_training_data(x, y, hyper)?;
    let feature_scaler = fit_column_scalers(x);
    let target_scaler = Scaler::fit(y.iter().copied());
    posterior(
        apply_scalers(x, &feature_scaler),
        DVector::from_iterator(y.len(), y.iter().map(|v| target_scaler.apply(*v))),
        feature_scaler,
        target_scaler,
        hyper.clone(),
        jitter,
    )
}

/// Adam first/second-moment state.
#[derive(Debug, Clone)]
pub(crate) struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub(crate) fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// Moves `params` along `direction` (ascent if `direction` is a gradient
    /// of the objective to maximize, descent if it is its negative).
    pub(crate) fn step(&mut self, params: &mut [f64], direction: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = direction[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            params[i] += self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub hyper: GpHyper,
    /// LML before each step, followed by the LML at the returned point.
    pub lml_trace: Vec<f64>,
}

/// Fixed-budget Adam ascent on the LML in log-hyperparameter space.
///
/// There is no early stopping: the step budget is the regularizer.
pub fn optimize_hyperparams(
    x: &DMatrix<f64>,
    y: &[f64],
    init: &GpHyper,
    steps: usize,
    learn_rate: f64,
) -> Result<OptimizeResult> {
    let mut model = fit_gp(x, y, init, DEFAULT_JITTER)?;
    let mut params = init.to_vec();
    let mut adam = Adam::new(params.len(), learn_rate);
    let mut lml_trace = Vec::with_capacity(steps + 1);
    for step in 0..=steps {
        let lml = model.log_marginal_likelihood();
        if !lml.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite LML at step {step} with hyperparameters {:?}",
                model.hyper
            )));
        }
        lml_trace.push(lml);
        if step == steps {
            break;
        }
        let grad = model.lml_gradient();
        adam.step(&mut params, &grad);
        model = model
            .refit(GpHyper::from_slice(&params), DEFAULT_JITTER)
            .map_err(|e| Error::Numerical(format!("refit failed at step {}: {e}", step + 1)))?;
    }
    Ok(OptimizeResult {
        hyper: GpHyper::from_slice(&params),
        lml_trace,
    })
}

/// Optimizes hyperparameters from the neutral start and fits the final model.
pub fn train_gp(x: &DMatrix<f64>, y: &[f64], steps: usize, learn_rate: f64) -> Result<GpModel> {
    let opt = optimize_hyperparams(x, y, &GpHyper::initial(x.ncols()), steps, learn_rate)?;
    fit_gp(x, y, &opt.hyper, DEFAULT_JITTER)
}

/// Serializable snapshot of a fitted expert; the factorization is rebuilt on
/// import.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpExport {
    pub feature_scaler: Vec<Scaler>,
    pub target_scaler: Scaler,
    pub hyper: GpHyper,
    pub jitter: f64,
    /// Standardized training inputs, row-major.
    pub train_inputs: Vec<Vec<f64>>,
    pub train_targets: Vec<f64>,
}

impl From<&GpModel> for GpExport {
    fn from(m: &GpModel) -> Self {
        Self {
            feature_scaler: m.feature_scaler.clone(),
            target_scaler: m.target_scaler,
            hyper: m.hyper.clone(),
            jitter: m.jitter,
            train_inputs: m.train_inputs.row_iter().map(|r| r.iter().copied().collect()).collect(),
            train_targets: m.train_targets.iter().copied().collect(),
        }
    }
}

impl GpExport {
    pub fn into_model(self) -> Result<GpModel> {
        let n = self.train_inputs.len();
        let d = self.hyper.dims();
        if self.train_inputs.iter().any(|r| r.len() != d) || self.train_targets.len() != n || n == 0 {
            return Err(Error::Validation("inconsistent GP export shapes".into()));
        }
        let x = DMatrix::from_fn(n, d, |i, j| self.train_inputs[i][j]);
        posterior(
            x,
            DVector::from_vec(self.train_targets),
            self.feature_scaler,
            self.target_scaler,
            self.hyper,
            self.jitter,
        )
    }
}
