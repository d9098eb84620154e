use battery_prognostics::baselines::svr::{solve_smo, SmoSettings};
use battery_prognostics::data::{CellHistory, DiagnosticCycle, LabeledSample, Sample};
use battery_prognostics::ensemble::mixture_moments;
use battery_prognostics::eval::nmae;
use battery_prognostics::ica::{design_lowpass, spearman, zero_phase_filter, FeatureVector};
use battery_prognostics::monitoring::{
    compute_kpis, simulate, Measurement, MonitoringTrace, RulEstimator, SohEstimator, StrategyConfig, TraceStatus,
};
use battery_prognostics::Result;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn finite_vec(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1e3f64..1e3, len)
}

/// One-sample diagnostic with the given end-of-charge capacity.
fn stub_diagnostic(cell: &str, cycle: u32, capacity: f64) -> DiagnosticCycle {
    let s = Sample {
        time_s: 0.0,
        voltage_v: 4.2,
        current_a: 0.74,
        charge_mah: capacity,
        temperature_c: 40.0,
    };
    DiagnosticCycle::new(cell, cycle, vec![s]).unwrap()
}

/// Cell with a linear fade from SoH 1 to `soh_end` over `cycles` diagnostics
/// spaced by `step` cycles.
fn linear_cell(cycles: u32, step: u32, soh_end: f64) -> CellHistory {
    let diags = (0..cycles)
        .map(|i| {
            let soh = 1.0 - (1.0 - soh_end) * i as f64 / (cycles - 1) as f64;
            stub_diagnostic("c", i * step, 740.0 * soh)
        })
        .collect();
    let mut cell = CellHistory::new("c", 740.0, diags).unwrap();
    cell.label(0.8).unwrap();
    cell
}

fn rows_of(cell: &CellHistory) -> Vec<LabeledSample> {
    cell.diagnostics
        .iter()
        .enumerate()
        .map(|(i, d)| LabeledSample {
            cell_id: cell.cell_id.clone(),
            cycle_number: d.cycle_number,
            features: FeatureVector::from_array([cell.soh_by_diag[i], 0.0, 0.0, 0.0, 0.0]),
            soh: cell.soh_by_diag[i],
            rul: cell.rul_by_diag[i],
        })
        .collect()
}

/// RUL from the true EOL, scaled and with a fixed σ.
struct ScaledTruth {
    n_eol: f64,
    scale: f64,
    sigma: f64,
}

impl RulEstimator for ScaledTruth {
    fn estimate_rul(&self, m: &Measurement) -> Result<(f64, f64)> {
        Ok(((self.n_eol - m.diagnostic_cycle as f64) * self.scale, self.sigma))
    }
}

struct NeverEol;

impl SohEstimator for NeverEol {
    fn estimate_soh(&self, _: &Measurement) -> Result<f64> {
        Ok(1.0)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nmae_is_affine_invariant(
        truth in finite_vec(2..40),
        noise in finite_vec(40..41),
        a in prop_oneof![-1e3f64..-1e-2, 1e-2f64..1e3],
        b in -1e4f64..1e4,
    ) {
        let lo = truth.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = truth.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assume!(hi - lo > 1e-6);
        let pred: Vec<f64> = truth.iter().zip(&noise).map(|(t, e)| t + 0.1 * e).collect();
        let base = nmae(&pred, &truth).unwrap();
        let ta: Vec<f64> = truth.iter().map(|t| a * t + b).collect();
        let pa: Vec<f64> = pred.iter().map(|p| a * p + b).collect();
        let moved = nmae(&pa, &ta).unwrap();
        prop_assert!((base - moved).abs() <= 1e-9 * base.max(1.0));
    }

    #[test]
    fn spearman_bounds_and_symmetries(x in finite_vec(3..30), y in finite_vec(30..31)) {
        let y = &y[..x.len()];
        if let Ok(r) = spearman(&x, y) {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
            prop_assert!((spearman(y, &x).unwrap() - r).abs() < 1e-12);
            let neg: Vec<f64> = y.iter().map(|v| -v).collect();
            prop_assert!((spearman(&x, &neg).unwrap() + r).abs() < 1e-12);
            // Strictly monotone transforms leave ranks unchanged.
            let cubed: Vec<f64> = x.iter().map(|v| v.powi(3) + 7.0).collect();
            prop_assert!((spearman(&cubed, y).unwrap() - r).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_phase_filter_commutes_with_reversal(signal in prop::collection::vec(-5f64..5.0, 50..400)) {
        let spec = design_lowpass(4, 0.01, 1.0).unwrap();
        let fwd = zero_phase_filter(&spec, &signal).unwrap();
        let mut rev = signal.clone();
        rev.reverse();
        let mut back = zero_phase_filter(&spec, &rev).unwrap();
        back.reverse();
        for (p, q) in fwd.iter().zip(&back) {
            prop_assert!((p - q).abs() <= 1e-9);
        }
    }

    #[test]
    fn mixture_variance_decomposes(
        parts in prop::collection::vec((0.01f64..1.0, -1e4f64..1e4, 1e-2f64..1e6), 1..8),
    ) {
        let total: f64 = parts.iter().map(|p| p.0).sum();
        let w: Vec<f64> = parts.iter().map(|p| p.0 / total).collect();
        let m: Vec<f64> = parts.iter().map(|p| p.1).collect();
        let v: Vec<f64> = parts.iter().map(|p| p.2).collect();
        let p = mixture_moments(&w, &m, &v);
        prop_assert!((p.variance - p.epistemic - p.aleatoric).abs() <= 1e-9 * p.variance.max(1.0));
        prop_assert!(p.aleatoric >= 0.0);
        let lo = m.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = m.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(p.mean >= lo - 1e-9 && p.mean <= hi + 1e-9);
        // The same mixture written in raw second-moment form.
        let raw: f64 = w.iter().zip(&m).zip(&v).map(|((w, m), v)| w * (v + m * m)).sum::<f64>() - p.mean * p.mean;
        prop_assert!((raw - p.variance).abs() <= 1e-6 * (p.variance + p.mean * p.mean).max(1.0));
    }

    #[test]
    fn conservative_rul_is_monotone_in_k(
        scale in 0.5f64..1.5,
        sigma in 1.0f64..300.0,
        k1 in 0.0f64..4.0,
        dk in 0.0f64..2.0,
    ) {
        let cell = linear_cell(60, 50, 0.7);
        let rows = rows_of(&cell);
        let est = ScaledTruth { n_eol: cell.n_eol.unwrap(), scale, sigma };
        let run = |k: f64| {
            let cfg = StrategyConfig { k, ..Default::default() };
            simulate(&rows, &est, &NeverEol, &cfg).unwrap()
        };
        let (a, b) = (run(k1), run(k1 + dk));
        prop_assert!(b.events[0].rul_cons <= a.events[0].rul_cons);
        for t in [&a, &b] {
            for e in &t.events {
                prop_assert!((e.rul_cons - (e.rul_mean - t.k * e.rul_sigma)).abs() < 1e-9);
            }
            for w in t.events.windows(2) {
                prop_assert!(w[1].operating_cycle > w[0].operating_cycle);
            }
        }
    }

    #[test]
    fn kpis_are_consistent(stop in 0.0f64..2950.0, soh_end in 0.6f64..0.79) {
        let cell = linear_cell(60, 50, soh_end);
        let trace = MonitoringTrace {
            cell_id: "c".into(),
            k: 2.0,
            events: Vec::new(),
            status: TraceStatus::Stopped,
            stop_cycle: stop,
        };
        let kpi = compute_kpis(&trace, &cell, 0.8).unwrap();
        prop_assume!((stop - cell.n_eol.unwrap()).abs() > 1e-6);
        prop_assert!(kpi.is_consistent(), "{kpi:?}");
        prop_assert!((kpi.utilization * cell.n_eol.unwrap() - stop).abs() < 1e-9);
    }
}

fn rbf_gram(x: &[Vec<f64>], gamma: f64) -> Vec<Vec<f64>> {
    x.iter()
        .map(|a| {
            x.iter()
                .map(|b| (-gamma * a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>()).exp())
                .collect()
        })
        .collect()
}

#[test]
fn svr_duality_gap_is_small_on_random_problems() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let x: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let y: Vec<f64> = x
            .iter()
            .map(|r| r[0].sin() + 0.3 * r[1] + 0.1 * rng.random_range(-1.0..1.0))
            .collect();
        let s = SmoSettings {
            c: rng.random_range(0.5..20.0),
            epsilon: rng.random_range(0.01..0.2),
            tolerance: 1e-6,
            max_iterations: 100_000,
        };
        let gram = rbf_gram(&x, rng.random_range(0.1..2.0));
        let sol = solve_smo(&gram, &y, &s).unwrap();
        let primal = sol.primal_objective(&gram, &y, &s);
        let dual = sol.dual_objective(&gram, &y, &s);
        let gap = (primal - dual) / primal.abs().max(1.0);
        assert!(gap >= -1e-9, "dual exceeds primal: {primal} < {dual}");
        assert!(gap <= 1e-4, "relative gap {gap:.2e} (primal {primal}, dual {dual})");
        let sum: f64 = sol.coef.iter().sum();
        assert!(sum.abs() < 1e-9);
        assert!(sol.coef.iter().all(|c| c.abs() <= s.c + 1e-12));
    }
}
