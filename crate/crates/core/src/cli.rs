//! Command-line entry point.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::baselines::RegressorSpec;
use crate::config::RunConfig;
use crate::data::{featurize_fleet, fmt_sig, load_fleet, select_rows, write_fleet, CellHistory, LabeledSample, Target};
use crate::ensemble::{score_epochs, select_epochs};
use crate::error::{Error, Result};
use crate::eval::{enumerate_splits, evaluate, MetricsReport, SplitPlan};
use crate::ica::{spearman, FEATURE_NAMES};
use crate::monitoring::{
    compute_kpis, simulate, sweep_k, train_split_models, write_kpi_csv, write_sweep_csv, write_trace_csv, KpiSummary,
    SweepResult,
};
use crate::report::{
    dataset_fingerprint, emit_report, write_predictions_csv, write_results_csv, write_summary_csv, RunManifest,
};
use crate::selftest::{run_selftest, SELFTEST_SEED};
use crate::synth::SyntheticFleet;

/// IC curves are written with every n-th point.
const CURVE_STRIDE: usize = 10;

#[derive(Debug, Parser)]
#[command(
    name = "batprog",
    version,
    about = "Battery SoH/RUL estimation from incremental-capacity features"
)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct DataArgs {
    /// Dataset directory in the canonical CSV layout.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// IC features per diagnostic and their rank correlations with SoH and RUL.
    Features {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Cross-cell benchmark of the regressors.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        /// soh or rul.
        #[arg(long)]
        target: Option<Target>,
        /// Comma-separated model kinds (e.g. svr,gprn); all when omitted.
        #[arg(long, value_delimiter = ',')]
        models: Vec<String>,
    },
    /// Monitoring trace of one cell with models trained on all other cells.
    Monitor {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        cell: String,
        #[arg(long)]
        k: Option<f64>,
    },
    /// Monitoring KPIs over all splits for a range of k.
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_delimiter = ',')]
        k: Vec<f64>,
        /// GPRn epoch candidates; the best by training MAE is used.
        #[arg(long, value_delimiter = ',')]
        epochs: Vec<usize>,
    },
    /// Writes a synthetic fleet in the canonical layout.
    Synth {
        #[arg(long, default_value_t = 8)]
        cells: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Oracle and property checks on the synthetic fleet.
    Selftest {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .try_init();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                2
            } else {
                1
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Features { data } => {
            let ctx = Context::open(&mut cfg, &data)?;
            cmd_features(&ctx)
        }
        Command::Evaluate { data, target, models } => {
            if let Some(t) = target {
                cfg.target = t;
            }
            let ctx = Context::open(&mut cfg, &data)?;
            cmd_evaluate(&ctx, &models)
        }
        Command::Monitor { data, cell, k } => {
            if let Some(k) = k {
                cfg.strategy.k = k;
            }
            cfg.validate()?;
            let ctx = Context::open(&mut cfg, &data)?;
            cmd_monitor(&ctx, &cell)
        }
        Command::Sweep { data, k, epochs } => {
            if !k.is_empty() {
                cfg.k_values = k;
            }
            if !epochs.is_empty() {
                cfg.epoch_candidates = epochs;
            }
            cfg.validate()?;
            let ctx = Context::open(&mut cfg, &data)?;
            cmd_sweep(&ctx)
        }
        Command::Synth { cells, seed, out } => {
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cmd_synth(&cfg, cells, &out)
        }
        Command::Selftest { seed, out } => cmd_selftest(&cfg, seed.unwrap_or(SELFTEST_SEED), out.as_deref()),
    }
}

/// Loaded, labelled and featurized dataset plus the resolved configuration.
struct Context {
    cfg: RunConfig,
    dataset: PathBuf,
    out: PathBuf,
    fleet: Vec<CellHistory>,
    rows: Vec<LabeledSample>,
}

impl Context {
    fn open(cfg: &mut RunConfig, args: &DataArgs) -> Result<Self> {
        if let Some(d) = &args.dataset {
            cfg.dataset_dir = Some(d.clone());
        }
        if let Some(o) = &args.out {
            cfg.output_dir = o.clone();
        }
        let dataset = match (&args.dataset, cfg.resolve_dataset_dir()) {
            (Some(d), _) => d.clone(),
            (None, Some(d)) => d,
            (None, None) => {
                return Err(Error::Validation(
                    "no dataset directory (use --dataset, the config file or BATTERY_DATASET_DIR)".into(),
                ))
            }
        };
        cfg.dataset_dir = Some(dataset.clone());
        let mut fleet = load_fleet(&dataset)?;
        for cell in &mut fleet {
            cell.label(cfg.strategy.soh_eol)?;
        }
        let rows = featurize_fleet(&fleet, &cfg.ica)?;
        log::info!("{} cells, {} featurized diagnostics", fleet.len(), rows.len());
        fs::create_dir_all(&cfg.output_dir)?;
        Ok(Self {
            cfg: cfg.clone(),
            out: cfg.output_dir.clone(),
            dataset,
            fleet,
            rows,
        })
    }

    fn finish(&self, command: &str, files: &[PathBuf]) -> Result<()> {
        let manifest = RunManifest::new(
            command,
            self.cfg.seed,
            self.cfg.to_toml()?,
            Some(dataset_fingerprint(&self.dataset)?),
        );
        for f in emit_report(&self.out, manifest, files)? {
            println!("wrote {}", f.display());
        }
        Ok(())
    }

    fn cell_ids(&self) -> Vec<String> {
        self.fleet.iter().map(|c| c.cell_id.clone()).collect()
    }
}

/// Rank correlation of each feature with `target` over `rows`.
pub fn feature_correlations(rows: &[LabeledSample], target: Target) -> Vec<Result<f64>> {
    let t: Vec<f64> = rows.iter().map(|r| target.value(r)).collect();
    (0..FEATURE_NAMES.len())
        .map(|k| {
            let f: Vec<f64> = rows.iter().map(|r| r.features.to_array()[k]).collect();
            spearman(&f, &t)
        })
        .collect()
}

fn fmt_corr(r: &Result<f64>) -> String {
    r.as_ref().map(|v| fmt_sig(*v)).unwrap_or_else(|_| "NaN".into())
}

fn cmd_features(ctx: &Context) -> Result<()> {
    let mut files = Vec::new();

    let path = ctx.out.join("features.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec!["cell", "cycle", "soh", "rul"];
    header.extend(FEATURE_NAMES);
    w.write_record(&header)?;
    for r in &ctx.rows {
        let mut rec = vec![
            r.cell_id.clone(),
            r.cycle_number.to_string(),
            fmt_sig(r.soh),
            fmt_sig(r.rul),
        ];
        rec.extend(r.features.to_array().iter().map(|v| fmt_sig(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    files.push(path);

    let path = ctx.out.join("correlations.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec!["target", "rows"];
    header.extend(FEATURE_NAMES);
    w.write_record(&header)?;
    for target in [Target::Soh, Target::Rul] {
        let rows = select_rows(&ctx.rows, target);
        let corr = feature_correlations(&rows, target);
        let mut rec = vec![target.name().to_string(), rows.len().to_string()];
        rec.extend(corr.iter().map(fmt_corr));
        println!("{:>4} {}", target.name(), rec[2..].join(" "));
        w.write_record(&rec)?;
    }
    w.flush()?;
    files.push(path);

    let path = ctx.out.join("correlations_by_cell.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec!["cell", "target", "rows"];
    header.extend(FEATURE_NAMES);
    w.write_record(&header)?;
    for cell in ctx.cell_ids() {
        for target in [Target::Soh, Target::Rul] {
            let rows: Vec<LabeledSample> = select_rows(&ctx.rows, target)
                .into_iter()
                .filter(|r| r.cell_id == cell)
                .collect();
            let mut rec = vec![cell.clone(), target.name().to_string(), rows.len().to_string()];
            rec.extend(feature_correlations(&rows, target).iter().map(fmt_corr));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    files.push(path);

    let path = ctx.out.join("ic_curves.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["cell", "cycle", "voltage_v", "ic_mah_per_v"])?;
    for cell in &ctx.fleet {
        for d in &cell.diagnostics {
            let Ok(curve) = ctx.cfg.ica.curve_for(d) else { continue };
            for i in (0..curve.len()).step_by(CURVE_STRIDE) {
                w.write_record([
                    cell.cell_id.clone(),
                    d.cycle_number.to_string(),
                    fmt_sig(curve.voltage_v[i]),
                    fmt_sig(curve.ic_mah_per_v[i]),
                ])?;
            }
        }
    }
    w.flush()?;
    files.push(path);
    ctx.finish("features", &files)
}

fn selected_specs(cfg: &RunConfig, models: &[String]) -> Result<Vec<RegressorSpec>> {
    let all = cfg.benchmark_specs();
    if models.is_empty() {
        return Ok(all);
    }
    let wanted: Vec<String> = models.iter().map(|m| m.trim().to_ascii_lowercase()).collect();
    for w in &wanted {
        if !all.iter().any(|s| s.model.name().to_ascii_lowercase() == *w) {
            return Err(Error::Validation(format!("unknown model {w:?}")));
        }
    }
    Ok(all
        .into_iter()
        .filter(|s| wanted.contains(&s.model.name().to_ascii_lowercase()))
        .collect())
}

fn cmd_evaluate(ctx: &Context, models: &[String]) -> Result<()> {
    let target = ctx.cfg.target;
    let specs = selected_specs(&ctx.cfg, models)?;
    let rows = select_rows(&ctx.rows, target);
    let mut reports: Vec<MetricsReport> = Vec::new();
    for spec in &specs {
        let report = evaluate(spec, &rows, target)?;
        let s = target.report_scale();
        println!(
            "{:<10} train {:>10} test {:>10} max {:>10} nmae {:>8} failed {}",
            report.model,
            format!("{:.3}", report.mae_train * s),
            format!("{:.3}", report.mae_test * s),
            format!("{:.3}", report.max_error_test * s),
            format!("{:.4}", report.nmae_test),
            report.failures.len()
        );
        reports.push(report);
    }
    let t = target.name();
    let files = vec![
        ctx.out.join(format!("results_{t}.csv")),
        ctx.out.join(format!("summary_{t}.csv")),
        ctx.out.join(format!("predictions_{t}.csv")),
    ];
    write_results_csv(&files[0], &reports)?;
    write_summary_csv(&files[1], &reports)?;
    write_predictions_csv(&files[2], &reports)?;
    ctx.finish("evaluate", &files)
}

fn cmd_monitor(ctx: &Context, cell_id: &str) -> Result<()> {
    let cell = ctx
        .fleet
        .iter()
        .find(|c| c.cell_id == cell_id)
        .ok_or_else(|| Error::Validation(format!("unknown cell {cell_id:?}")))?;
    let plan = SplitPlan {
        id: 0,
        train_cells: ctx.cell_ids().into_iter().filter(|c| c != cell_id).collect(),
        test_cells: vec![cell_id.to_string()],
    };
    let cfg = &ctx.cfg.strategy;
    let models = train_split_models(&ctx.rows, &plan, cfg, &ctx.cfg.soh_model)?;
    let cell_rows: Vec<LabeledSample> = ctx.rows.iter().filter(|r| r.cell_id == cell_id).cloned().collect();
    let trace = simulate(&cell_rows, &models.rul, &models.soh, cfg)?;
    let kpi = compute_kpis(&trace, cell, cfg.soh_eol)?;
    println!(
        "{cell_id} k={} U={:.4} M={} overcycled={} dN_eol={:.0} dSoH_eol={:.4} ({:?})",
        cfg.k, kpi.utilization, kpi.steps, kpi.overcycled, kpi.delta_n_eol, kpi.delta_soh_eol, trace.status
    );
    let trace_path = ctx.out.join(format!("monitor_trace_{cell_id}.csv"));
    write_trace_csv(&trace_path, &trace)?;
    let kpi_path = ctx.out.join(format!("kpi_{}.csv", cfg.k));
    let mut by_cell = std::collections::BTreeMap::new();
    by_cell.insert(cell_id.to_string(), vec![KpiSummary::of(cfg.k, &[&kpi])]);
    write_kpi_csv(&kpi_path, &by_cell, cfg.k)?;
    ctx.finish("monitor", &[trace_path, kpi_path])
}

fn write_runs_csv(path: &Path, sweep: &SweepResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "k",
        "split",
        "cell",
        "status",
        "stop_cycle",
        "U",
        "M",
        "overcycled",
        "dN_eol",
        "dSoH_eol",
    ])?;
    for r in &sweep.runs {
        w.write_record([
            r.k.to_string(),
            r.split_id.to_string(),
            r.cell_id.clone(),
            serde_json::to_value(r.trace.status)?
                .as_str()
                .unwrap_or_default()
                .to_string(),
            fmt_sig(r.trace.stop_cycle),
            fmt_sig(r.kpi.utilization),
            r.kpi.steps.to_string(),
            (r.kpi.overcycled as u8).to_string(),
            fmt_sig(r.kpi.delta_n_eol),
            fmt_sig(r.kpi.delta_soh_eol),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_sweep(ctx: &Context) -> Result<()> {
    let plans = enumerate_splits(&ctx.cell_ids())?;
    let mut files = Vec::new();
    let mut strategy = ctx.cfg.strategy.clone();
    if ctx.cfg.epoch_candidates.len() > 1 {
        let data = crate::baselines::cell_data(&select_rows(&ctx.rows, Target::Rul), Target::Rul);
        let scores = score_epochs(&data, &ctx.cfg.epoch_candidates, &plans)?;
        let path = ctx.out.join("epochs.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["epochs", "train_mae"])?;
        for s in &scores {
            w.write_record([s.epochs.to_string(), fmt_sig(s.train_mae)])?;
        }
        w.flush()?;
        files.push(path);
        strategy.epochs = select_epochs(&scores);
        println!("selected {} GPRn epochs", strategy.epochs);
    } else {
        strategy.epochs = ctx.cfg.epoch_candidates[0];
    }
    let sweep = sweep_k(
        &ctx.fleet,
        &ctx.rows,
        &plans,
        &ctx.cfg.k_values,
        &strategy,
        &ctx.cfg.soh_model,
    )?;
    for s in &sweep.by_k {
        println!(
            "k={:<5} U={:.4} M={:.2} P_over={:.3} dN_eol={:.0} dSoH_eol={:.4}",
            s.k, s.utilization, s.steps, s.p_over, s.delta_n_eol, s.delta_soh_eol
        );
    }
    let path = ctx.out.join("sweep_k.csv");
    write_sweep_csv(&path, &sweep.by_k)?;
    files.push(path);
    for &k in &ctx.cfg.k_values {
        let path = ctx.out.join(format!("kpi_{k}.csv"));
        write_kpi_csv(&path, &sweep.by_cell, k)?;
        files.push(path);
    }
    let path = ctx.out.join("monitor_runs.csv");
    write_runs_csv(&path, &sweep)?;
    files.push(path);
    let violations = sweep.step_monotonicity_violations();
    if !violations.is_empty() {
        log::info!(
            "{} (split, cell, k pair) cases where M decreased with larger k",
            violations.len()
        );
    }
    ctx.finish("sweep", &files)
}

fn cmd_synth(cfg: &RunConfig, cells: usize, out: &Path) -> Result<()> {
    let fleet = SyntheticFleet::generate(cells, cfg.seed)?;
    let mut files = write_fleet(out, &fleet.cells)?;
    let path = out.join("synthetic_truth.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["cell", "tau", "beta", "n_eol"])?;
    for (c, f) in fleet.cells.iter().zip(&fleet.fades) {
        w.write_record([c.cell_id.clone(), fmt_sig(f.tau), fmt_sig(f.beta), fmt_sig(f.n_eol)])?;
    }
    w.flush()?;
    files.push(path);
    println!("{} synthetic cells (seed {}) in {}", cells, cfg.seed, out.display());
    Ok(())
}

fn cmd_selftest(cfg: &RunConfig, seed: u64, out: Option<&Path>) -> Result<()> {
    let report = run_selftest(seed)?;
    for c in &report.checks {
        println!("{c}");
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let path = dir.join("selftest.json");
        fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")?;
        let manifest = RunManifest::new("selftest", seed, cfg.to_toml()?, None);
        emit_report(dir, manifest, &[path])?;
    }
    if report.all_passed() {
        println!("selftest passed ({} checks)", report.checks.len());
        Ok(())
    } else {
        let failed = report.checks.iter().filter(|c| !c.passed).count();
        Err(Error::Numerical(format!("{failed} selftest check(s) failed")))
    }
}
