//! One line per acceptance criterion.
//!
//! Criteria on the vendor fleet need the converted dataset in the directory
//! named by `BATTERY_DATASET_DIR`; without it they print `BLOCKED`. The same
//! pipeline always runs on the seed-7 synthetic fleet and prints `PROXY`
//! lines, which are informational only: the synthetic fleet is not
//! calibrated to the vendor numbers.

use std::time::Instant;

use battery_prognostics::baselines::{cell_data, RegressorSpec};
use battery_prognostics::cli::feature_correlations;
use battery_prognostics::config::{RunConfig, DATASET_DIR_ENV};
use battery_prognostics::data::{featurize_fleet, load_fleet, select_rows, CellHistory, LabeledSample, Target};
use battery_prognostics::ensemble::train_gprn;
use battery_prognostics::eval::{enumerate_splits, evaluate, MetricsReport, SplitPlan};
use battery_prognostics::ica::IcaConfig;
use battery_prognostics::monitoring::{sweep_k, StrategyConfig, SweepResult};
use battery_prognostics::selftest::{
    check_charge_conservation, run_selftest, synthetic_dataset, SelftestReport, SELFTEST_SEED,
};

mod tol {
    /// Reference rank correlations, rows SoH and RUL, columns F1..F5.
    pub const SPEARMAN_REF: [[f64; 5]; 2] = [
        [0.9974, -0.9817, 0.9873, 0.9830, -0.9908],
        [0.9702, -0.9488, 0.9814, 0.9811, -0.9715],
    ];
    pub const F1_BAND: f64 = 0.02;
    pub const MIN_ABS_RHO: f64 = 0.90;
    pub const TABLE1_SECONDS: f64 = 60.0;

    /// SoH limits in percent.
    pub const SVR_SOH_MAE: f64 = 0.5;
    pub const GPR_SOH_MAE: f64 = 0.6;
    pub const ANY_SOH_MAE: f64 = 1.5;
    /// Poly1D must be among the this many worst models.
    pub const POLY1D_WORST_RANK: usize = 2;

    /// RUL limits in cycles.
    pub const GPRN_RUL_MAE: f64 = 300.0;
    pub const GPR_OVERFIT_RATIO: f64 = 3.0;
    pub const GPRN_RUL_MAX: f64 = 1600.0;

    pub const NMAE_SOH: f64 = 0.02;
    pub const NMAE_RATIO: f64 = 2.0;

    pub const MONITOR_K: f64 = 2.0;
    pub const MEAN_STEPS: f64 = 5.0;
    pub const P_OVER: f64 = 2.0 / 8.0;
    pub const MEAN_UTILIZATION: f64 = 0.90;
    pub const DELTA_SOH: f64 = 0.02;
    pub const SWEEP_K: [f64; 3] = [0.0, MONITOR_K, 4.0];

    pub const DECOMPOSITION: f64 = 1e-9;
}

struct Criterion {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn crit(name: &'static str, passed: bool, detail: String) -> Criterion {
    Criterion { name, passed, detail }
}

/// Everything the fleet criteria are computed from.
struct FleetRun {
    rows: Vec<LabeledSample>,
    corr: [[f64; 5]; 2],
    table1_seconds: f64,
    soh: Vec<MetricsReport>,
    rul: Vec<MetricsReport>,
    decomposition_worst: f64,
    decomposition_count: usize,
    sweep: SweepResult,
    charge: (bool, String),
}

fn run_fleet(mut fleet: Vec<CellHistory>, ica: &IcaConfig) -> FleetRun {
    let strategy = StrategyConfig::default();
    for c in &mut fleet {
        c.label(strategy.soh_eol).unwrap();
    }
    let t0 = Instant::now();
    let rows = featurize_fleet(&fleet, ica).unwrap();
    let mut corr = [[f64::NAN; 5]; 2];
    for (i, target) in [Target::Soh, Target::Rul].into_iter().enumerate() {
        for (j, r) in feature_correlations(&select_rows(&rows, target), target)
            .into_iter()
            .enumerate()
        {
            corr[i][j] = r.unwrap_or(f64::NAN);
        }
    }
    let table1_seconds = t0.elapsed().as_secs_f64();

    let suite = RegressorSpec::benchmark_suite(RunConfig::default().seed);
    let bench = |target: Target| -> Vec<MetricsReport> {
        let rows = select_rows(&rows, target);
        suite.iter().map(|s| evaluate(s, &rows, target).unwrap()).collect()
    };
    let soh = bench(Target::Soh);
    let rul = bench(Target::Rul);

    let ids: Vec<String> = fleet.iter().map(|c| c.cell_id.clone()).collect();
    let plans = enumerate_splits(&ids).unwrap();
    let (decomposition_worst, decomposition_count) = decomposition_on_all_rows(&rows, &plans, strategy.epochs);
    let sweep = sweep_k(
        &fleet,
        &rows,
        &plans,
        &tol::SWEEP_K,
        &strategy,
        &RunConfig::default().soh_model,
    )
    .unwrap();
    let charge = check_charge_conservation(&fleet, ica).unwrap();
    FleetRun {
        rows,
        corr,
        table1_seconds,
        soh,
        rul,
        decomposition_worst,
        decomposition_count,
        sweep,
        charge: (charge.passed, charge.detail),
    }
}

/// Worst `|variance - epistemic - aleatoric| / max(variance, 1)` of the GPRn
/// of every split on every featurized row.
fn decomposition_on_all_rows(rows: &[LabeledSample], plans: &[SplitPlan], epochs: usize) -> (f64, usize) {
    let rul_rows = select_rows(rows, Target::Rul);
    let mut worst = 0.0f64;
    let mut count = 0;
    for plan in plans {
        let train: Vec<LabeledSample> = rul_rows
            .iter()
            .filter(|r| plan.train_cells.contains(&r.cell_id))
            .cloned()
            .collect();
        let model = train_gprn(&cell_data(&train, Target::Rul), epochs).unwrap();
        for r in rows {
            let p = model.predict_mixture(&r.features.to_array()).unwrap();
            worst = worst.max((p.variance - p.epistemic - p.aleatoric).abs() / p.variance.max(1.0));
            count += 1;
        }
    }
    (worst, count)
}

fn report<'a>(reports: &'a [MetricsReport], model: &str) -> &'a MetricsReport {
    reports.iter().find(|r| r.model == model).unwrap()
}

fn fleet_criteria(run: &FleetRun) -> Vec<Criterion> {
    let mut out = Vec::new();

    let c = &run.corr;
    let f1_ok = (0..2).all(|i| (c[i][0] - tol::SPEARMAN_REF[i][0]).abs() <= tol::F1_BAND);
    let signs_ok = (0..2).all(|i| {
        (0..5).all(|j| c[i][j].abs() >= tol::MIN_ABS_RHO && c[i][j].signum() == tol::SPEARMAN_REF[i][j].signum())
    });
    let fmt_row = |r: &[f64; 5]| r.iter().map(|v| format!("{v:+.4}")).collect::<Vec<_>>().join(" ");
    out.push(crit(
        "table1_spearman",
        f1_ok && signs_ok && run.table1_seconds < tol::TABLE1_SECONDS,
        format!(
            "SoH [{}] RUL [{}]; F1 within ±{} {f1_ok}, all |rho| >= {} with reference signs {signs_ok}; {:.1} s on {} rows",
            fmt_row(&c[0]),
            fmt_row(&c[1]),
            tol::F1_BAND,
            tol::MIN_ABS_RHO,
            run.table1_seconds,
            run.rows.len()
        ),
    ));

    let pct = |r: &MetricsReport| r.mae_test * Target::Soh.report_scale();
    let svr = pct(report(&run.soh, "SVR"));
    let gpr = pct(report(&run.soh, "GPR"));
    let poly = pct(report(&run.soh, "Poly1D"));
    let worse_than_poly = run.soh.iter().filter(|r| pct(r) > poly).count();
    let max_any = run.soh.iter().map(pct).fold(0.0, f64::max);
    let failed: usize = run.soh.iter().map(|r| r.failures.len()).sum();
    out.push(crit(
        "table2_soh",
        svr <= tol::SVR_SOH_MAE
            && gpr <= tol::GPR_SOH_MAE
            && worse_than_poly < tol::POLY1D_WORST_RANK
            && max_any <= tol::ANY_SOH_MAE
            && failed == 0,
        format!(
            "test MAE % SVR {svr:.3} (<= {}), GPR {gpr:.3} (<= {}), Poly1D {poly:.3} with {worse_than_poly} model(s) worse (< {}), max {max_any:.3} (<= {}); failed splits {failed}",
            tol::SVR_SOH_MAE,
            tol::GPR_SOH_MAE,
            tol::POLY1D_WORST_RANK,
            tol::ANY_SOH_MAE
        ),
    ));

    let gprn = report(&run.rul, "GPRn");
    let gpr = report(&run.rul, "GPR");
    let ratio = gpr.mae_test / gpr.mae_train;
    let failed: usize = run.rul.iter().map(|r| r.failures.len()).sum();
    out.push(crit(
        "table3_rul",
        gprn.mae_test <= tol::GPRN_RUL_MAE
            && gprn.mae_test < gpr.mae_test
            && ratio >= tol::GPR_OVERFIT_RATIO
            && gprn.max_error_test <= tol::GPRN_RUL_MAX
            && failed == 0,
        format!(
            "GPRn test MAE {:.1} (<= {}, GPR {:.1}), GPR test/train {ratio:.2} (>= {}), GPRn max error {:.0} (<= {}); failed splits {failed}",
            gprn.mae_test,
            tol::GPRN_RUL_MAE,
            gpr.mae_test,
            tol::GPR_OVERFIT_RATIO,
            gprn.max_error_test,
            tol::GPRN_RUL_MAX
        ),
    ));

    let n_soh = report(&run.soh, "SVR").nmae_test;
    let n_rul = report(&run.rul, "GPRn").nmae_test;
    out.push(crit(
        "nmae_contrast",
        n_soh <= tol::NMAE_SOH && n_rul >= tol::NMAE_RATIO * n_soh,
        format!(
            "NMAE SoH (SVR) {:.2}% (<= {}%), RUL (GPRn) {:.2}%, ratio {:.2} (>= {})",
            100.0 * n_soh,
            100.0 * tol::NMAE_SOH,
            100.0 * n_rul,
            n_rul / n_soh,
            tol::NMAE_RATIO
        ),
    ));

    let s = run.sweep.summary_for(tol::MONITOR_K).unwrap();
    let p0 = run.sweep.summary_for(0.0).unwrap().p_over;
    let p4 = run.sweep.summary_for(4.0).unwrap().p_over;
    let max_dsoh = run
        .sweep
        .runs
        .iter()
        .filter(|r| r.k == tol::MONITOR_K)
        .map(|r| r.kpi.delta_soh_eol.abs())
        .fold(0.0, f64::max);
    out.push(crit(
        "monitoring_k2",
        s.steps <= tol::MEAN_STEPS
            && s.p_over <= tol::P_OVER
            && s.utilization >= tol::MEAN_UTILIZATION
            && max_dsoh <= tol::DELTA_SOH
            && p0 > p4,
        format!(
            "k=2 over {} runs: mean M {:.2} (<= {}), P_over {:.3} (<= {:.3}), mean U {:.3} (>= {}), max |dSoH_EOL| {max_dsoh:.4} (<= {}); P_over k=0 {p0:.3} > k=4 {p4:.3}",
            s.runs,
            s.steps,
            tol::MEAN_STEPS,
            s.p_over,
            tol::P_OVER,
            s.utilization,
            tol::MEAN_UTILIZATION,
            tol::DELTA_SOH
        ),
    ));
    out
}

fn check<'a>(report: &'a SelftestReport, name: &str) -> &'a battery_prognostics::selftest::CheckOutcome {
    report
        .checks
        .iter()
        .find(|c| c.name == name)
        .unwrap_or_else(|| panic!("missing check {name}"))
}

fn property_criteria(st: &SelftestReport, proxy: &FleetRun, vendor: Option<&FleetRun>) -> Vec<Criterion> {
    let both = |a: &str, b: &str| {
        let (x, y) = (check(st, a), check(st, b));
        (x.passed && y.passed, format!("{}; {}", x.detail, y.detail))
    };
    let mut out = Vec::new();

    let (ok, detail) = both("gp_posterior_vs_dense_inverse", "gp_lml_vs_determinant");
    out.push(crit("gp_oracle", ok, detail));
    let g = check(st, "lml_gradient_vs_finite_differences");
    out.push(crit("lml_gradient", g.passed, g.detail.clone()));

    let (ok, detail) = both("mixture_moments_vs_monte_carlo", "variance_decomposition_identity");
    let mut runs = vec![("synthetic", proxy)];
    runs.extend(vendor.map(|v| ("vendor", v)));
    let mut ok = ok;
    let mut detail = detail;
    for (label, r) in runs {
        ok &= r.decomposition_worst <= tol::DECOMPOSITION && r.decomposition_count > 0;
        detail += &format!(
            "; {label} benchmark GPRn: {} predictions, max error {:.2e}",
            r.decomposition_count, r.decomposition_worst
        );
    }
    out.push(crit("mixture_moments", ok, detail));

    let names = [
        "filter_constant_identity",
        "filter_zero_lag",
        "filter_reversal_symmetry",
    ];
    let mut ok = names.iter().all(|n| check(st, n).passed) && proxy.charge.0;
    let mut detail: Vec<String> = names.iter().map(|n| check(st, n).detail.clone()).collect();
    detail.push(format!("synthetic charge: {}", proxy.charge.1));
    match vendor {
        Some(v) => {
            ok &= v.charge.0;
            detail.push(format!("vendor charge: {}", v.charge.1));
        }
        None => detail.push("vendor charge: not evaluated (no dataset)".into()),
    }
    out.push(crit("signal_processing", ok, detail.join("; ")));

    let failed: Vec<&str> = st
        .checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| c.name.as_str())
        .collect();
    let rho = check(st, "spearman_f1_soh_per_cell");
    out.push(crit(
        "selftest_fallback",
        failed.is_empty(),
        format!("{} checks, failed {:?}; {}", st.checks.len(), failed, rho.detail),
    ));
    out
}

fn main() {
    let started = Instant::now();
    let ica = IcaConfig::default();
    let selftest = run_selftest(SELFTEST_SEED).unwrap();

    let (synthetic_fleet, _) = synthetic_dataset(SELFTEST_SEED, &ica).unwrap();
    let proxy = run_fleet(synthetic_fleet, &ica);

    let vendor_dir = std::env::var_os(DATASET_DIR_ENV).filter(|v| !v.is_empty());
    let vendor = vendor_dir.as_ref().map(|dir| {
        let fleet = load_fleet(std::path::Path::new(dir))
            .unwrap_or_else(|e| panic!("{DATASET_DIR_ENV} is set but the dataset does not load: {e}"));
        run_fleet(fleet, &ica)
    });

    let mut all_ok = true;
    println!("== acceptance ==");
    match &vendor {
        Some(v) => {
            for c in fleet_criteria(v) {
                all_ok &= c.passed;
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
        }
        None => {
            for name in [
                "table1_spearman",
                "table2_soh",
                "table3_rul",
                "nmae_contrast",
                "monitoring_k2",
            ] {
                println!("BLOCKED {name}: vendor dataset not available (set {DATASET_DIR_ENV})");
            }
        }
    }
    for c in property_criteria(&selftest, &proxy, vendor.as_ref()) {
        all_ok &= c.passed;
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    println!("== synthetic proxy (seed {SELFTEST_SEED}, informational) ==");
    for c in fleet_criteria(&proxy) {
        println!(
            "PROXY {} {}: {}",
            if c.passed { "pass" } else { "fail" },
            c.name,
            c.detail
        );
    }
    println!("acceptance finished in {:.0} s", started.elapsed().as_secs_f64());
    if !all_ok {
        eprintln!("acceptance criteria failed");
        std::process::exit(1);
    }
}
