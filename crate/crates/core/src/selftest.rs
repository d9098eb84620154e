//! Dataset-free property and oracle suite.
//!
//! Each check compares the library against an independent computation
//! (dense inversion, explicit determinants, finite differences, Monte Carlo)
//! or a structural property, on random problems or the synthetic fleet.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::baselines::cell_data;
use crate::data::{featurize_fleet, select_rows, CellHistory, LabeledSample, Target};
use crate::ensemble::{mixture_moments, train_gprn};
use crate::error::Result;
use crate::gp::{fit_gp, GpHyper, GpModel, DEFAULT_JITTER};
use crate::ica::{extract_cc_segment, spearman, zero_phase_filter, IcaConfig};
use crate::synth::generate_synthetic_fleet;

/// Pinned tolerances of the suite.
pub mod tolerance {
    /// Posterior mean/variance versus dense inversion.
    pub const GP_ORACLE: f64 = 1e-10;
    /// LML versus the explicit-determinant formula.
    pub const LML: f64 = 1e-9;
    /// Componentwise relative error of the analytic LML gradient.
    pub const GRADIENT_REL: f64 = 1e-4;
    /// Gradient magnitudes below this are compared absolutely.
    pub const GRADIENT_FLOOR: f64 = 1e-6;
    pub const FD_STEP: f64 = 1e-5;
    /// Mixture moments versus Monte Carlo, relative.
    pub const MIXTURE_MC_REL: f64 = 5e-3;
    pub const MC_DRAWS: usize = 1_000_000;
    /// `variance = epistemic + aleatoric`, relative.
    pub const DECOMPOSITION: f64 = 1e-9;
    pub const FILTER: f64 = 1e-9;
    /// `|∫IC dV - Q_cc| / Q_cc`.
    pub const CHARGE_CONSERVATION: f64 = 0.02;
    pub const SPEARMAN_F1_SOH_MIN: f64 = 0.95;
}

pub const SYNTHETIC_CELLS: usize = 8;
pub const SELFTEST_SEED: u64 = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

impl std::fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {}: {}", self.name, self.detail)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelftestReport {
    pub checks: Vec<CheckOutcome>,
}

impl SelftestReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn scaled_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn random_problem(rng: &mut ChaCha8Rng, n: usize, d: usize) -> (DMatrix<f64>, Vec<f64>, GpHyper) {
    let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0));
    let y = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    let hyper = GpHyper {
        log_signal_var: rng.random_range(-1.0..1.0),
        log_lengthscales: (0..d).map(|_| rng.random_range(-0.7..0.7)).collect(),
        log_noise_var: rng.random_range(-4.0..0.0),
    };
    (x, y, hyper)
}

/// Squared-exponential kernel written out independently of the library.
fn oracle_kernel(a: &[f64], b: &[f64], h: &GpHyper) -> f64 {
    let mut r2 = 0.0;
    for j in 0..a.len() {
        let l = h.log_lengthscales[j].exp();
        r2 += (a[j] - b[j]) * (a[j] - b[j]) / (l * l);
    }
    h.log_signal_var.exp() * (-0.5 * r2).exp()
}

fn oracle_gram(m: &GpModel) -> DMatrix<f64> {
    let n = m.n_train();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| m.train_inputs.row(i).iter().copied().collect())
        .collect();
    DMatrix::from_fn(n, n, |i, j| {
        let k = oracle_kernel(&rows[i], &rows[j], &m.hyper);
        if i == j {
            k + m.hyper.log_noise_var.exp() + m.jitter
        } else {
            k
        }
    })
}

/// Posterior moments and LML by dense inversion and LU determinant on 20
/// random problems (n ≤ 10, d ≤ 3).
pub fn check_gp_oracle(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst_post, mut worst_lml) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let n = rng.random_range(1..=10);
        let d = rng.random_range(1..=3);
        let (x, y, hyper) = random_problem(&mut rng, n, d);
        let model = fit_gp(&x, &y, &hyper, DEFAULT_JITTER)?;
        let k = oracle_gram(&model);
        let k_inv = k.clone().try_inverse().expect("regularized Gram is invertible");
        let t = &model.train_targets;
        for _ in 0..5 {
            let z: Vec<f64> = (0..d).map(|_| rng.random_range(-2.5..2.5)).collect();
            let ks = DVector::from_iterator(
                n,
                (0..n).map(|i| {
                    oracle_kernel(
                        &model.train_inputs.row(i).iter().copied().collect::<Vec<_>>(),
                        &z,
                        &hyper,
                    )
                }),
            );
            let mean = (ks.transpose() * &k_inv * t)[(0, 0)];
            let var = hyper.log_signal_var.exp() - (ks.transpose() * &k_inv * &ks)[(0, 0)] + hyper.log_noise_var.exp();
            let (m, v) = model.predict_standardized(&z);
            worst_post = worst_post.max(scaled_err(m, mean)).max(scaled_err(v, var));
        }
        let quad = (t.transpose() * &k_inv * t)[(0, 0)];
        let lml = -0.5 * quad - 0.5 * k.determinant().ln() - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        worst_lml = worst_lml.max(scaled_err(model.log_marginal_likelihood(), lml));
    }
    Ok(vec![
        CheckOutcome::new(
            "gp_posterior_vs_dense_inverse",
            worst_post <= tolerance::GP_ORACLE,
            format!(
                "20 problems, max error {worst_post:.2e} (tol {:.0e})",
                tolerance::GP_ORACLE
            ),
        ),
        CheckOutcome::new(
            "gp_lml_vs_determinant",
            worst_lml <= tolerance::LML,
            format!("20 problems, max error {worst_lml:.2e} (tol {:.0e})", tolerance::LML),
        ),
    ])
}

/// Analytic LML gradient versus central differences, 10 problems for each
/// d ∈ {1, 2, 5}.
pub fn check_gradient(seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let h = tolerance::FD_STEP;
    for d in [1usize, 2, 5] {
        for _ in 0..10 {
            let n = rng.random_range(5..=15);
            let (x, y, hyper) = random_problem(&mut rng, n, d);
            let model = fit_gp(&x, &y, &hyper, DEFAULT_JITTER)?;
            let grad = model.lml_gradient();
            let p0 = hyper.to_vec();
            for (i, g) in grad.iter().enumerate() {
                let eval = |delta: f64| -> Result<f64> {
                    let mut p = p0.clone();
                    p[i] += delta;
                    Ok(model
                        .refit(GpHyper::from_slice(&p), model.jitter)?
                        .log_marginal_likelihood())
                };
                let fd = (eval(h)? - eval(-h)?) / (2.0 * h);
                let rel = (g - fd).abs() / fd.abs().max(g.abs()).max(tolerance::GRADIENT_FLOOR);
                worst = worst.max(rel);
            }
        }
    }
    Ok(CheckOutcome::new(
        "lml_gradient_vs_finite_differences",
        worst <= tolerance::GRADIENT_REL,
        format!(
            "30 problems, max relative error {worst:.2e} (tol {:.0e})",
            tolerance::GRADIENT_REL
        ),
    ))
}

/// Mixture moments and their split versus Monte Carlo on 10 random
/// 5-expert mixtures.
pub fn check_mixture_moments(seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let raw: Vec<f64> = (0..5).map(|_| rng.random_range(0.2..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let means: Vec<f64> = (0..5).map(|_| rng.random_range(200.0..2000.0)).collect();
        let vars: Vec<f64> = (0..5).map(|_| rng.random_range(50.0f64..400.0).powi(2)).collect();
        let exact = mixture_moments(&weights, &means, &vars);

        let cdf: Vec<f64> = weights
            .iter()
            .scan(0.0, |acc, w| {
                *acc += w;
                Some(*acc)
            })
            .collect();
        let (mut s1, mut s2, mut e_var, mut m1, mut m2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..tolerance::MC_DRAWS {
            let u: f64 = rng.random();
            let c = cdf.iter().position(|&p| u < p).unwrap_or(4);
            let v = means[c] + vars[c].sqrt() * std_normal.sample(&mut rng);
            s1 += v;
            s2 += v * v;
            e_var += vars[c];
            m1 += means[c];
            m2 += means[c] * means[c];
        }
        let n = tolerance::MC_DRAWS as f64;
        let mc_mean = s1 / n;
        let mc_var = s2 / n - mc_mean * mc_mean;
        let mc_epi = e_var / n;
        let mc_ale = m2 / n - (m1 / n) * (m1 / n);
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
        worst = worst
            .max(rel(mc_mean, exact.mean))
            .max(rel(mc_var, exact.variance))
            .max(rel(mc_epi, exact.epistemic))
            .max(rel(mc_ale, exact.aleatoric));
    }
    Ok(CheckOutcome::new(
        "mixture_moments_vs_monte_carlo",
        worst <= tolerance::MIXTURE_MC_REL,
        format!(
            "10 mixtures x {} draws, max relative error {worst:.2e} (tol {:.1e})",
            tolerance::MC_DRAWS,
            tolerance::MIXTURE_MC_REL
        ),
    ))
}

/// `variance = epistemic + aleatoric` on every held-out prediction of a
/// GPRn trained on all but two cells.
pub fn check_decomposition(rows: &[LabeledSample], epochs: usize) -> Result<CheckOutcome> {
    let rul_rows = select_rows(rows, Target::Rul);
    let mut cells: Vec<String> = rul_rows.iter().map(|r| r.cell_id.clone()).collect();
    cells.sort();
    cells.dedup();
    let held: Vec<String> = cells.iter().rev().take(2).cloned().collect();
    let train: Vec<LabeledSample> = rul_rows
        .iter()
        .filter(|r| !held.contains(&r.cell_id))
        .cloned()
        .collect();
    let model = train_gprn(&cell_data(&train, Target::Rul), epochs)?;
    let mut worst = 0.0f64;
    let mut count = 0;
    for r in rows.iter().filter(|r| held.contains(&r.cell_id)) {
        let p = model.predict_mixture(&r.features.to_array())?;
        worst = worst.max((p.variance - (p.epistemic + p.aleatoric)).abs() / p.variance.abs().max(1.0));
        count += 1;
    }
    Ok(CheckOutcome::new(
        "variance_decomposition_identity",
        worst <= tolerance::DECOMPOSITION && count > 0,
        format!(
            "{count} predictions, max relative error {worst:.2e} (tol {:.0e})",
            tolerance::DECOMPOSITION
        ),
    ))
}

/// Constant identity, lag-0 peak of the input/output cross-correlation for
/// an in-band sinusoid, and commutation with time reversal.
pub fn check_filter_properties(ica: &IcaConfig, seed: u64) -> Result<Vec<CheckOutcome>> {
    let spec = ica.filter()?;
    let n = 4000;
    let constant = zero_phase_filter(&spec, &vec![3.7; n])?;
    let const_err = constant.iter().map(|v| (v - 3.7).abs()).fold(0.0, f64::max);

    let f = ica.cutoff_hz / 5.0;
    let dt = 1.0 / ica.sample_rate_hz;
    let sine: Vec<f64> = (0..n)
        .map(|i| (2.0 * std::f64::consts::PI * f * i as f64 * dt).sin())
        .collect();
    let out = zero_phase_filter(&spec, &sine)?;
    let margin = 500;
    let xcorr = |lag: isize| -> f64 {
        (margin..n - margin)
            .map(|i| sine[i] * out[(i as isize + lag) as usize])
            .sum()
    };
    let best_lag = (-50isize..=50)
        .max_by(|a, b| xcorr(*a).total_cmp(&xcorr(*b)))
        .unwrap_or(0);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noisy: Vec<f64> = (0..n)
        .map(|i| 3.5 + 0.0002 * i as f64 + rng.random_range(-0.01..0.01))
        .collect();
    let forward = zero_phase_filter(&spec, &noisy)?;
    let mut reversed = noisy.clone();
    reversed.reverse();
    let mut backward = zero_phase_filter(&spec, &reversed)?;
    backward.reverse();
    let rev_err = forward
        .iter()
        .zip(&backward)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    Ok(vec![
        CheckOutcome::new(
            "filter_constant_identity",
            const_err <= tolerance::FILTER,
            format!("max deviation {const_err:.2e} (tol {:.0e})", tolerance::FILTER),
        ),
        CheckOutcome::new(
            "filter_zero_lag",
            best_lag == 0,
            format!("cross-correlation peak at lag {best_lag} for a {f} Hz sinusoid"),
        ),
        CheckOutcome::new(
            "filter_reversal_symmetry",
            rev_err <= tolerance::FILTER,
            format!("max deviation {rev_err:.2e} (tol {:.0e})", tolerance::FILTER),
        ),
    ])
}

/// `∫ IC dV` versus the charge passed during the CC segment, every
/// diagnostic of every cell.
pub fn check_charge_conservation(fleet: &[CellHistory], ica: &IcaConfig) -> Result<CheckOutcome> {
    let mut worst = 0.0f64;
    let mut count = 0;
    for cell in fleet {
        for d in &cell.diagnostics {
            let (Ok(curve), Ok(seg)) = (ica.curve_for(d), extract_cc_segment(d)) else {
                continue;
            };
            let q = seg.charge_throughput_mah();
            worst = worst.max((curve.integral_mah() - q).abs() / q);
            count += 1;
        }
    }
    Ok(CheckOutcome::new(
        "ic_charge_conservation",
        count > 0 && worst <= tolerance::CHARGE_CONSERVATION,
        format!(
            "{count} diagnostics, max relative deviation {:.3}% (tol {}%)",
            worst * 100.0,
            tolerance::CHARGE_CONSERVATION * 100.0
        ),
    ))
}

/// Spearman(F1, SoH) per cell over the SoH dataset rows.
pub fn per_cell_f1_spearman(rows: &[LabeledSample]) -> Vec<(String, Result<f64>)> {
    let soh_rows = select_rows(rows, Target::Soh);
    let mut cells: Vec<String> = soh_rows.iter().map(|r| r.cell_id.clone()).collect();
    cells.sort();
    cells.dedup();
    cells
        .into_iter()
        .map(|c| {
            let (f1, soh): (Vec<f64>, Vec<f64>) = soh_rows
                .iter()
                .filter(|r| r.cell_id == c)
                .map(|r| (r.features.f1_ic_peak, r.soh))
                .unzip();
            let rho = spearman(&f1, &soh);
            (c, rho)
        })
        .collect()
}

pub fn check_f1_spearman(rows: &[LabeledSample]) -> CheckOutcome {
    let per_cell = per_cell_f1_spearman(rows);
    let min = per_cell
        .iter()
        .map(|(_, r)| r.as_ref().copied().unwrap_or(f64::NEG_INFINITY))
        .fold(f64::INFINITY, f64::min);
    CheckOutcome::new(
        "spearman_f1_soh_per_cell",
        !per_cell.is_empty() && min >= tolerance::SPEARMAN_F1_SOH_MIN,
        format!(
            "{} cells, min rho {min:.4} (threshold {})",
            per_cell.len(),
            tolerance::SPEARMAN_F1_SOH_MIN
        ),
    )
}

/// Labelled seed-`seed` synthetic fleet and its featurized rows.
pub fn synthetic_dataset(seed: u64, ica: &IcaConfig) -> Result<(Vec<CellHistory>, Vec<LabeledSample>)> {
    let mut fleet = generate_synthetic_fleet(SYNTHETIC_CELLS, seed)?;
    for cell in &mut fleet {
        cell.label(crate::data::DEFAULT_SOH_EOL)?;
    }
    let rows = featurize_fleet(&fleet, ica)?;
    Ok((fleet, rows))
}

/// Runs every check on the synthetic fleet generated from `seed`.
pub fn run_selftest(seed: u64) -> Result<SelftestReport> {
    let ica = IcaConfig::default();
    let (fleet, rows) = synthetic_dataset(seed, &ica)?;
    let mut checks = check_gp_oracle(seed)?;
    checks.push(check_gradient(seed)?);
    checks.push(check_mixture_moments(seed)?);
    checks.push(check_decomposition(&rows, 20)?);
    checks.extend(check_filter_properties(&ica, seed)?);
    checks.push(check_charge_conservation(&fleet, &ica)?);
    checks.push(check_f1_spearman(&rows));
    Ok(SelftestReport { checks })
}
