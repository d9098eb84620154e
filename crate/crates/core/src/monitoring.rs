//! Replay of the iterative RUL monitoring strategy on a held-out cell.
//!
//! The battery is operated in stretches of `⌊μ - kσ⌋` cycles. After each
//! stretch a diagnostic measurement is taken (the recorded diagnostic nearest
//! to the current operating cycle), the RUL mixture and the SoH are
//! re-estimated, and the strategy stops once the conservative RUL drops to
//! `n_min` or the SoH estimate reaches end of life.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{cell_data, fit_regressor, FittedRegressor, RegressorSpec};
use crate::data::{fmt_sig, select_rows, CellHistory, LabeledSample, Target, DEFAULT_SOH_EOL};
use crate::ensemble::{train_gprn, GprnModel};
use crate::error::{Error, Result};
use crate::eval::SplitPlan;
use crate::ica::FeatureVector;

pub const DEFAULT_N_MIN: f64 = 40.0;
pub const DEFAULT_MAX_ITERATIONS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategyConfig {
    /// Margin multiplier on the mixture standard deviation.
    pub k: f64,
    pub n_min: f64,
    pub soh_eol: f64,
    /// GPRn training epochs.
    pub epochs: usize,
    pub max_iterations: usize,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            k: 2.0,
            n_min: DEFAULT_N_MIN,
            soh_eol: DEFAULT_SOH_EOL,
            epochs: 20,
            max_iterations: DEFAULT_MAX_ITERATIONS,
        }
    }
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.k >= 0.0 && self.k.is_finite()) {
            return Err(Error::Validation(format!("k must be ≥ 0, got {}", self.k)));
        }
        if !(self.n_min >= 1.0 && self.n_min.is_finite()) {
            return Err(Error::Validation(format!("n_min must be ≥ 1, got {}", self.n_min)));
        }
        if !(self.soh_eol > 0.0 && self.soh_eol < 1.0) {
            return Err(Error::Validation(format!(
                "soh_eol must lie in (0, 1), got {}",
                self.soh_eol
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::Validation("max_iterations must be positive".into()));
        }
        Ok(())
    }
}

/// What the estimators see at one measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement<'a> {
    pub cell_id: &'a str,
    /// Cycles actually operated so far.
    pub operating_cycle: f64,
    /// Recorded diagnostic used as the measurement.
    pub diagnostic_cycle: u32,
    pub features: FeatureVector,
}

pub trait RulEstimator {
    /// Predictive mean and standard deviation in cycles.
    fn estimate_rul(&self, m: &Measurement) -> Result<(f64, f64)>;
}

pub trait SohEstimator {
    fn estimate_soh(&self, m: &Measurement) -> Result<f64>;
}

impl RulEstimator for GprnModel {
    fn estimate_rul(&self, m: &Measurement) -> Result<(f64, f64)> {
        let p = self.predict_mixture(&m.features.to_array())?;
        Ok((p.mean, p.std()))
    }
}

impl SohEstimator for FittedRegressor {
    fn estimate_soh(&self, m: &Measurement) -> Result<f64> {
        self.predict(&m.features)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Operate,
    Stop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitoringEvent {
    pub operating_cycle: f64,
    pub measured_cycle: u32,
    pub rul_mean: f64,
    pub rul_sigma: f64,
    pub rul_cons: f64,
    pub soh_est: f64,
    pub decision: Decision,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceStatus {
    Stopped,
    /// The operating cycle moved past the last recorded diagnostic.
    DataExhausted,
    IterationCap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitoringTrace {
    pub cell_id: String,
    pub k: f64,
    pub events: Vec<MonitoringEvent>,
    pub status: TraceStatus,
    /// Operating cycle at which the battery was taken out of service.
    pub stop_cycle: f64,
}

/// Index of the diagnostic nearest to `cycle`; ties go to the earlier one.
fn snap(cycles: &[u32], cycle: f64) -> usize {
    let mut best = 0;
    for (i, &c) in cycles.iter().enumerate() {
        if (c as f64 - cycle).abs() < (cycles[best] as f64 - cycle).abs() {
            best = i;
        }
    }
    best
}

/// Runs the strategy on one cell's featurized diagnostics.
pub fn simulate(
    cell_rows: &[LabeledSample],
    rul: &dyn RulEstimator,
    soh: &dyn SohEstimator,
    cfg: &StrategyConfig,
) -> Result<MonitoringTrace> {
    cfg.validate()?;
    let mut rows: Vec<&LabeledSample> = cell_rows.iter().collect();
    rows.sort_by_key(|r| r.cycle_number);
    let cell_id = match rows.first() {
        Some(r) => r.cell_id.clone(),
        None => return Err(Error::Validation("no diagnostics to monitor".into())),
    };
    if rows.iter().any(|r| r.cell_id != cell_id) {
        return Err(Error::Validation("monitoring rows span several cells".into()));
    }
    if rows.len() < 2 {
        return Err(Error::Validation(format!(
            "cell {cell_id} needs at least 2 diagnostics"
        )));
    }
    let cycles: Vec<u32> = rows.iter().map(|r| r.cycle_number).collect();
    let last = *cycles.last().unwrap() as f64;

    let mut events = Vec::new();
    let mut op = cycles[0] as f64;
    for _ in 0..cfg.max_iterations {
        if op > last {
            return Ok(MonitoringTrace {
                cell_id,
                k: cfg.k,
                events,
                status: TraceStatus::DataExhausted,
                stop_cycle: op,
            });
        }
        let row = rows[snap(&cycles, op)];
        let m = Measurement {
            cell_id: &cell_id,
            operating_cycle: op,
            diagnostic_cycle: row.cycle_number,
            features: row.features,
        };
        let (mu, sigma) = rul.estimate_rul(&m)?;
        let soh_est = soh.estimate_soh(&m)?;
        if !(mu.is_finite() && sigma.is_finite() && soh_est.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite estimate for cell {cell_id} at cycle {op}"
            )));
        }
        let rul_cons = mu - cfg.k * sigma;
        let stop = rul_cons <= cfg.n_min || soh_est <= cfg.soh_eol;
        events.push(MonitoringEvent {
            operating_cycle: op,
            measured_cycle: row.cycle_number,
            rul_mean: mu,
            rul_sigma: sigma,
            rul_cons,
            soh_est,
            decision: if stop { Decision::Stop } else { Decision::Operate },
        });
        if stop {
            return Ok(MonitoringTrace {
                cell_id,
                k: cfg.k,
                events,
                status: TraceStatus::Stopped,
                stop_cycle: op,
            });
        }
        op += rul_cons.floor().max(1.0);
    }
    Ok(MonitoringTrace {
        cell_id,
        k: cfg.k,
        events,
        status: TraceStatus::IterationCap,
        stop_cycle: op,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiReport {
    pub utilization: f64,
    pub steps: usize,
    pub overcycled: bool,
    pub delta_n_eol: f64,
    pub delta_soh_eol: f64,
}

impl KpiReport {
    /// Overcycling, a negative cycle margin and a below-threshold SoH at the
    /// stop must agree.
    pub fn is_consistent(&self) -> bool {
        self.overcycled == (self.delta_n_eol < 0.0) && self.overcycled == (self.delta_soh_eol < 0.0)
    }
}

pub fn compute_kpis(trace: &MonitoringTrace, cell: &CellHistory, soh_eol: f64) -> Result<KpiReport> {
    let n_eol = cell.n_eol.ok_or_else(|| Error::EolUndetermined(cell.cell_id.clone()))?;
    let soh_at_stop = cell
        .soh_at(trace.stop_cycle)
        .ok_or_else(|| Error::Validation(format!("cell {} has no SoH labels", cell.cell_id)))?;
    Ok(KpiReport {
        utilization: trace.stop_cycle / n_eol,
        steps: trace.events.len(),
        overcycled: trace.stop_cycle > n_eol,
        delta_n_eol: n_eol - trace.stop_cycle,
        delta_soh_eol: soh_at_stop - soh_eol,
    })
}

/// One simulated (split, test cell, k) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitoringRun {
    pub k: f64,
    pub split_id: usize,
    pub cell_id: String,
    pub trace: MonitoringTrace,
    pub kpi: KpiReport,
}

/// Mean KPIs over a group of runs; `p_over` is the overcycled fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiSummary {
    pub k: f64,
    pub runs: usize,
    pub utilization: f64,
    pub steps: f64,
    pub p_over: f64,
    pub delta_n_eol: f64,
    pub delta_soh_eol: f64,
}

impl KpiSummary {
    pub fn of(k: f64, kpis: &[&KpiReport]) -> Self {
        let n = kpis.len().max(1) as f64;
        let mean = |f: fn(&KpiReport) -> f64| kpis.iter().map(|r| f(r)).sum::<f64>() / n;
        Self {
            k,
            runs: kpis.len(),
            utilization: mean(|r| r.utilization),
            steps: mean(|r| r.steps as f64),
            p_over: mean(|r| if r.overcycled { 1.0 } else { 0.0 }),
            delta_n_eol: mean(|r| r.delta_n_eol),
            delta_soh_eol: mean(|r| r.delta_soh_eol),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub runs: Vec<MonitoringRun>,
    /// Fleet means per k, over every (split, test cell) run.
    pub by_k: Vec<KpiSummary>,
    /// Per-cell means per k, over the splits holding that cell out.
    pub by_cell: BTreeMap<String, Vec<KpiSummary>>,
}

impl SweepResult {
    fn assemble(runs: Vec<MonitoringRun>, k_values: &[f64]) -> Self {
        let by_k = k_values
            .iter()
            .map(|&k| KpiSummary::of(k, &runs.iter().filter(|r| r.k == k).map(|r| &r.kpi).collect::<Vec<_>>()))
            .collect();
        let mut by_cell: BTreeMap<String, Vec<KpiSummary>> = BTreeMap::new();
        let cells: Vec<String> = {
            let mut c: Vec<String> = runs.iter().map(|r| r.cell_id.clone()).collect();
            c.sort();
            c.dedup();
            c
        };
        for cell in cells {
            let rows = k_values
                .iter()
                .map(|&k| {
                    let kpis: Vec<&KpiReport> = runs
                        .iter()
                        .filter(|r| r.k == k && r.cell_id == cell)
                        .map(|r| &r.kpi)
                        .collect();
                    KpiSummary::of(k, &kpis)
                })
                .collect();
            by_cell.insert(cell, rows);
        }
        Self { runs, by_k, by_cell }
    }

    pub fn summary_for(&self, k: f64) -> Option<&KpiSummary> {
        self.by_k.iter().find(|s| s.k == k)
    }

    /// Runs where more steps were taken at a smaller k on the same split and
    /// cell; reported, not enforced.
    pub fn step_monotonicity_violations(&self) -> Vec<(usize, String, f64, f64)> {
        let mut out = Vec::new();
        for a in &self.runs {
            for b in &self.runs {
                if a.split_id == b.split_id && a.cell_id == b.cell_id && a.k < b.k && a.kpi.steps > b.kpi.steps {
                    out.push((a.split_id, a.cell_id.clone(), a.k, b.k));
                }
            }
        }
        out
    }
}

/// Models trained on one split's training cells.
pub struct SplitModels {
    pub rul: GprnModel,
    pub soh: FittedRegressor,
}

pub fn train_split_models(
    rows: &[LabeledSample],
    plan: &SplitPlan,
    cfg: &StrategyConfig,
    soh_spec: &RegressorSpec,
) -> Result<SplitModels> {
    let train: Vec<LabeledSample> = rows
        .iter()
        .filter(|r| plan.train_cells.contains(&r.cell_id))
        .cloned()
        .collect();
    let rul = train_gprn(&cell_data(&select_rows(&train, Target::Rul), Target::Rul), cfg.epochs)?;
    let soh = fit_regressor(soh_spec, &select_rows(&train, Target::Soh), Target::Soh)?;
    Ok(SplitModels { rul, soh })
}

/// Simulates every test cell of every split for every k. Models are trained
/// once per split and shared across k.
pub fn sweep_k(
    fleet: &[CellHistory],
    rows: &[LabeledSample],
    plans: &[SplitPlan],
    k_values: &[f64],
    base: &StrategyConfig,
    soh_spec: &RegressorSpec,
) -> Result<SweepResult> {
    if k_values.is_empty() {
        return Err(Error::Validation("k sweep needs at least one k".into()));
    }
    base.validate()?;
    let cells: BTreeMap<&str, &CellHistory> = fleet.iter().map(|c| (c.cell_id.as_str(), c)).collect();
    let mut runs = Vec::new();
    for plan in plans {
        let models = train_split_models(rows, plan, base, soh_spec)?;
        for cell_id in &plan.test_cells {
            let cell = cells
                .get(cell_id.as_str())
                .ok_or_else(|| Error::Validation(format!("no history for test cell {cell_id}")))?;
            let cell_rows: Vec<LabeledSample> = rows.iter().filter(|r| &r.cell_id == cell_id).cloned().collect();
            for &k in k_values {
                let cfg = StrategyConfig { k, ..base.clone() };
                let trace = simulate(&cell_rows, &models.rul, &models.soh, &cfg)?;
                let kpi = compute_kpis(&trace, cell, cfg.soh_eol)?;
                runs.push(MonitoringRun {
                    k,
                    split_id: plan.id,
                    cell_id: cell_id.clone(),
                    trace,
                    kpi,
                });
            }
        }
    }
    Ok(SweepResult::assemble(runs, k_values))
}

pub fn write_trace_csv(path: &Path, trace: &MonitoringTrace) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "step",
        "operating_cycle",
        "measured_cycle",
        "rul_mean",
        "rul_sigma",
        "rul_cons",
        "soh_est",
        "decision",
    ])?;
    for (i, e) in trace.events.iter().enumerate() {
        w.write_record([
            i.to_string(),
            fmt_sig(e.operating_cycle),
            e.measured_cycle.to_string(),
            fmt_sig(e.rul_mean),
            fmt_sig(e.rul_sigma),
            fmt_sig(e.rul_cons),
            fmt_sig(e.soh_est),
            match e.decision {
                Decision::Operate => "operate".into(),
                Decision::Stop => "stop".into(),
            },
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-cell KPI table for one k.
pub fn write_kpi_csv(path: &Path, by_cell: &BTreeMap<String, Vec<KpiSummary>>, k: f64) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["cell", "runs", "U", "M", "P_over", "dN_eol", "dSoH_eol"])?;
    for (cell, rows) in by_cell {
        if let Some(s) = rows.iter().find(|s| s.k == k) {
            w.write_record([
                cell.clone(),
                s.runs.to_string(),
                fmt_sig(s.utilization),
                fmt_sig(s.steps),
                fmt_sig(s.p_over),
                fmt_sig(s.delta_n_eol),
                fmt_sig(s.delta_soh_eol),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep_csv(path: &Path, by_k: &[KpiSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["k", "U", "M", "P_over", "dN_eol", "dSoH_eol"])?;
    for s in by_k {
        w.write_record([
            fmt_sig(s.k),
            fmt_sig(s.utilization),
            fmt_sig(s.steps),
            fmt_sig(s.p_over),
            fmt_sig(s.delta_n_eol),
            fmt_sig(s.delta_soh_eol),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DiagnosticCycle, Sample};

    /// True RUL and SoH from the cell's labels, zero uncertainty.
    struct Oracle<'a>(&'a CellHistory);

    impl RulEstimator for Oracle<'_> {
        fn estimate_rul(&self, m: &Measurement) -> Result<(f64, f64)> {
            Ok((self.0.n_eol.unwrap() - m.operating_cycle, 0.0))
        }
    }

    impl SohEstimator for Oracle<'_> {
        fn estimate_soh(&self, m: &Measurement) -> Result<f64> {
            Ok(self.0.soh_at(m.operating_cycle).unwrap())
        }
    }

    struct Fixed(f64, f64, f64);

    impl RulEstimator for Fixed {
        fn estimate_rul(&self, _: &Measurement) -> Result<(f64, f64)> {
            Ok((self.0, self.1))
        }
    }

    impl SohEstimator for Fixed {
        fn estimate_soh(&self, _: &Measurement) -> Result<f64> {
            Ok(self.2)
        }
    }

    fn linear_cell(n_diag: u32, fade_per_100: f64) -> (CellHistory, Vec<LabeledSample>) {
        let diagnostics = (0..n_diag)
            .map(|i| {
                let cap = 740.0 * (1.0 - fade_per_100 * i as f64);
                let samples = vec![
                    Sample {
                        time_s: 0.0,
                        voltage_v: 3.0,
                        current_a: 0.74,
                        charge_mah: 0.0,
                        temperature_c: 25.0,
                    },
                    Sample {
                        time_s: 10.0,
                        voltage_v: 4.2,
                        current_a: 0.74,
                        charge_mah: cap,
                        temperature_c: 25.0,
                    },
                ];
                DiagnosticCycle::new("c", i * 100, samples).unwrap()
            })
            .collect();
        let mut cell = CellHistory::new("c", 740.0, diagnostics).unwrap();
        cell.label(0.8).unwrap();
        let rows = cell
            .diagnostics
            .iter()
            .enumerate()
            .map(|(i, d)| LabeledSample {
                cell_id: "c".into(),
                cycle_number: d.cycle_number,
                features: FeatureVector::default(),
                soh: cell.soh_by_diag[i],
                rul: cell.rul_by_diag[i],
            })
            .collect();
        (cell, rows)
    }

    #[test]
    fn snapping_prefers_earlier_on_ties() {
        let c = [0, 100, 200];
        assert_eq!(snap(&c, 50.0), 0);
        assert_eq!(snap(&c, 51.0), 1);
        assert_eq!(snap(&c, 149.0), 1);
        assert_eq!(snap(&c, 1e6), 2);
    }

    #[test]
    fn oracle_stops_within_n_min_without_overcycling() {
        // 0.7% fade per 100 cycles: EOL at 2857.14.
        let (cell, rows) = linear_cell(40, 0.007);
        for k in [0.0, 1.0, 5.0] {
            let cfg = StrategyConfig {
                k,
                ..Default::default()
            };
            let trace = simulate(&rows, &Oracle(&cell), &Oracle(&cell), &cfg).unwrap();
            assert_eq!(trace.status, TraceStatus::Stopped);
            let kpi = compute_kpis(&trace, &cell, 0.8).unwrap();
            assert!(!kpi.overcycled);
            assert!(kpi.delta_n_eol <= cfg.n_min && kpi.delta_n_eol >= 0.0, "{kpi:?}");
            assert!(kpi.is_consistent());
            assert_eq!(kpi.steps, 2);
        }
    }

    #[test]
    fn immediate_stop_when_margin_is_exhausted() {
        let (cell, rows) = linear_cell(10, 0.03);
        let trace = simulate(
            &rows,
            &Fixed(-5.0, 1.0, 0.95),
            &Fixed(0.0, 0.0, 0.95),
            &StrategyConfig::default(),
        )
        .unwrap();
        assert_eq!(trace.events.len(), 1);
        assert_eq!(trace.events[0].decision, Decision::Stop);
        let kpi = compute_kpis(&trace, &cell, 0.8).unwrap();
        assert_eq!(kpi.steps, 1);
        assert_eq!(kpi.utilization, 0.0);
    }

    #[test]
    fn soh_threshold_also_stops() {
        let (_, rows) = linear_cell(10, 0.03);
        let trace = simulate(
            &rows,
            &Fixed(1e4, 0.0, 0.0),
            &Fixed(0.0, 0.0, 0.79),
            &StrategyConfig::default(),
        )
        .unwrap();
        assert_eq!(trace.events.len(), 1);
    }

    #[test]
    fn conservative_rul_is_exact_and_non_increasing_in_k() {
        let (_, rows) = linear_cell(10, 0.03);
        let mut last = f64::INFINITY;
        for k in [0.0, 0.5, 1.0, 2.0, 4.0] {
            let cfg = StrategyConfig {
                k,
                ..Default::default()
            };
            let t = simulate(&rows, &Fixed(300.0, 37.5, 0.95), &Fixed(0.0, 0.0, 0.95), &cfg).unwrap();
            let e = &t.events[0];
            assert_eq!(e.rul_cons, e.rul_mean - k * e.rul_sigma);
            assert!(e.rul_cons <= last);
            last = e.rul_cons;
        }
    }

    #[test]
    fn iteration_cap_and_data_exhaustion() {
        let (_, rows) = linear_cell(10, 0.03);
        // Advances one cycle at a time and never reaches the threshold.
        let cfg = StrategyConfig {
            n_min: 1.0,
            ..Default::default()
        };
        let t = simulate(&rows, &Fixed(1.5, 0.0, 0.95), &Fixed(0.0, 0.0, 0.95), &cfg).unwrap();
        assert_eq!(t.status, TraceStatus::IterationCap);
        assert_eq!(t.events.len(), DEFAULT_MAX_ITERATIONS);
        let t = simulate(&rows, &Fixed(5000.0, 0.0, 0.95), &Fixed(0.0, 0.0, 0.95), &cfg).unwrap();
        assert_eq!(t.status, TraceStatus::DataExhausted);
        assert_eq!(t.stop_cycle, 5000.0);
    }

    #[test]
    fn kpis_at_exact_eol() {
        let (cell, _) = linear_cell(40, 0.01);
        let trace = MonitoringTrace {
            cell_id: "c".into(),
            k: 0.0,
            events: vec![],
            status: TraceStatus::Stopped,
            stop_cycle: cell.n_eol.unwrap(),
        };
        let kpi = compute_kpis(&trace, &cell, 0.8).unwrap();
        assert!((kpi.utilization - 1.0).abs() < 1e-12);
        assert!(kpi.delta_n_eol.abs() < 1e-9);
        assert!(kpi.delta_soh_eol.abs() < 1e-9);
        assert!(!kpi.overcycled);
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(StrategyConfig {
            k: -1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(StrategyConfig {
            n_min: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn summary_means() {
        let a = KpiReport {
            utilization: 0.9,
            steps: 3,
            overcycled: false,
            delta_n_eol: 100.0,
            delta_soh_eol: 0.01,
        };
        let b = KpiReport {
            utilization: 1.1,
            steps: 5,
            overcycled: true,
            delta_n_eol: -100.0,
            delta_soh_eol: -0.01,
        };
        let s = KpiSummary::of(2.0, &[&a, &b]);
        assert_eq!(s.p_over, 0.5);
        assert_eq!(s.steps, 4.0);
        assert!((s.utilization - 1.0).abs() < 1e-15);
    }
}
