//! Canonical dataset format, cell histories and SoH/RUL labelling.
//!
//! On disk a fleet is a directory holding `cells.csv`
//! (`cell_id,rated_capacity_mah`) and one `diagnostics_<cell_id>.csv` per cell
//! (`cycle_number,time_s,voltage_v,current_a,charge_mah,temperature_c`), rows
//! grouped by cycle number and time-sorted within a cycle.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ica::{FeatureVector, IcaConfig};

pub const DEFAULT_RATED_CAPACITY_MAH: f64 = 740.0;
pub const DEFAULT_SOH_EOL: f64 = 0.8;
/// RUL rows extend this many cycles past end of life.
pub const RUL_HORIZON_PAST_EOL: f64 = 400.0;

const VOLTAGE_RANGE: (f64, f64) = (2.0, 4.5);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub time_s: f64,
    pub voltage_v: f64,
    /// Positive while charging.
    pub current_a: f64,
    pub charge_mah: f64,
    pub temperature_c: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticCycle {
    pub cell_id: String,
    pub cycle_number: u32,
    pub samples: Vec<Sample>,
    pub end_of_charge_capacity_mah: f64,
}

impl DiagnosticCycle {
    pub fn new(cell_id: impl Into<String>, cycle_number: u32, samples: Vec<Sample>) -> Result<Self> {
        let cell_id = cell_id.into();
        validate_samples(&samples)
            .map_err(|msg| Error::Validation(format!("cell {cell_id} cycle {cycle_number}: {msg}")))?;
        let capacity = end_of_charge_capacity(&samples);
        if !(capacity > 0.0) {
            return Err(Error::Validation(format!(
                "cell {cell_id} cycle {cycle_number}: end-of-charge capacity {capacity} is not positive"
            )));
        }
        Ok(Self {
            cell_id,
            cycle_number,
            samples,
            end_of_charge_capacity_mah: capacity,
        })
    }
}

fn validate_samples(samples: &[Sample]) -> std::result::Result<(), String> {
    if samples.is_empty() {
        return Err("no samples".into());
    }
    for (k, w) in samples.windows(2).enumerate() {
        if !(w[1].time_s > w[0].time_s) {
            return Err(format!("time not strictly increasing at sample {}", k + 1));
        }
    }
    for (k, s) in samples.iter().enumerate() {
        if !(VOLTAGE_RANGE.0..=VOLTAGE_RANGE.1).contains(&s.voltage_v) {
            return Err(format!("voltage {} V out of range at sample {k}", s.voltage_v));
        }
        if ![s.time_s, s.current_a, s.charge_mah, s.temperature_c]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(format!("non-finite value at sample {k}"));
        }
    }
    Ok(())
}

/// Final `charge_mah` of the charging portion (last sample with positive current).
fn end_of_charge_capacity(samples: &[Sample]) -> f64 {
    samples
        .iter()
        .rev()
        .find(|s| s.current_a > 0.0)
        .or(samples.last())
        .map_or(0.0, |s| s.charge_mah)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellHistory {
    pub cell_id: String,
    pub rated_capacity_mah: f64,
    /// Sorted by cycle number, unique cycle numbers.
    pub diagnostics: Vec<DiagnosticCycle>,
    /// SoH fraction per diagnostic; empty until [`compute_soh_labels`] runs.
    pub soh_by_diag: Vec<f64>,
    pub n_eol: Option<f64>,
    /// Cycles to EOL per diagnostic; negative past EOL.
    pub rul_by_diag: Vec<f64>,
}

impl CellHistory {
    pub fn new(
        cell_id: impl Into<String>,
        rated_capacity_mah: f64,
        mut diagnostics: Vec<DiagnosticCycle>,
    ) -> Result<Self> {
        let cell_id = cell_id.into();
        diagnostics.sort_by_key(|d| d.cycle_number);
        if let Some(w) = diagnostics.windows(2).find(|w| w[0].cycle_number == w[1].cycle_number) {
            return Err(Error::Validation(format!(
                "cell {cell_id}: duplicate diagnostic cycle {}",
                w[0].cycle_number
            )));
        }
        Ok(Self {
            cell_id,
            rated_capacity_mah,
            diagnostics,
            soh_by_diag: Vec::new(),
            n_eol: None,
            rul_by_diag: Vec::new(),
        })
    }

    pub fn cycle_numbers(&self) -> Vec<f64> {
        self.diagnostics.iter().map(|d| d.cycle_number as f64).collect()
    }

    /// Computes SoH, EOL and RUL labels in one go.
    pub fn label(&mut self, soh_eol: f64) -> Result<()> {
        compute_soh_labels(self)?;
        compute_eol_and_rul(self, soh_eol)
    }

    /// SoH linearly interpolated at an arbitrary cycle; clamped to the end
    /// values outside the recorded range.
    pub fn soh_at(&self, cycle: f64) -> Option<f64> {
        if self.soh_by_diag.is_empty() {
            return None;
        }
        Some(interp_clamped(&self.cycle_numbers(), &self.soh_by_diag, cycle))
    }
}

pub(crate) fn interp_clamped(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let i = xs.partition_point(|&v| v <= x);
    let (x0, x1, y0, y1) = (xs[i - 1], xs[i], ys[i - 1], ys[i]);
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// `soh_i = capacity_i / rated_capacity`.
pub fn compute_soh_labels(history: &mut CellHistory) -> Result<()> {
    if !(history.rated_capacity_mah > 0.0) {
        return Err(Error::Validation(format!(
            "cell {}: rated capacity {} must be positive",
            history.cell_id, history.rated_capacity_mah
        )));
    }
    history.soh_by_diag = history
        .diagnostics
        .iter()
        .map(|d| d.end_of_charge_capacity_mah / history.rated_capacity_mah)
        .collect();
    Ok(())
}

/// EOL is the first downward crossing of `soh_eol`, linearly interpolated
/// between the bracketing diagnostics. Later recoveries are ignored.
pub fn compute_eol_and_rul(history: &mut CellHistory, soh_eol: f64) -> Result<()> {
    if history.soh_by_diag.len() != history.diagnostics.len() {
        return Err(Error::Validation(format!(
            "cell {}: SoH labels missing",
            history.cell_id
        )));
    }
    let cycles = history.cycle_numbers();
    let soh = &history.soh_by_diag;
    let n_eol = (1..soh.len())
        .find(|&i| soh[i - 1] > soh_eol && soh[i] <= soh_eol)
        .map(|i| {
            if soh[i] == soh_eol {
                cycles[i]
            } else {
                let frac = (soh[i - 1] - soh_eol) / (soh[i - 1] - soh[i]);
                cycles[i - 1] + frac * (cycles[i] - cycles[i - 1])
            }
        })
        .ok_or_else(|| Error::EolUndetermined(history.cell_id.clone()))?;
    history.n_eol = Some(n_eol);
    history.rul_by_diag = cycles.iter().map(|c| n_eol - c).collect();
    Ok(())
}

/// Regression target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Soh,
    Rul,
}

impl Target {
    pub fn name(self) -> &'static str {
        match self {
            Target::Soh => "soh",
            Target::Rul => "rul",
        }
    }

    pub fn value(self, s: &LabeledSample) -> f64 {
        match self {
            Target::Soh => s.soh,
            Target::Rul => s.rul,
        }
    }

    /// Whether a labelled diagnostic belongs in this target's dataset.
    pub fn retains(self, s: &LabeledSample) -> bool {
        match self {
            Target::Soh => s.soh >= DEFAULT_SOH_EOL,
            Target::Rul => s.rul >= -RUL_HORIZON_PAST_EOL,
        }
    }

    /// Scale used when reporting errors (SoH in percent, RUL in cycles).
    pub fn report_scale(self) -> f64 {
        match self {
            Target::Soh => 100.0,
            Target::Rul => 1.0,
        }
    }
}

impl std::str::FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "soh" => Ok(Target::Soh),
            "rul" => Ok(Target::Rul),
            other => Err(Error::Validation(format!("unknown target {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub cell_id: String,
    pub cycle_number: u32,
    pub features: FeatureVector,
    pub soh: f64,
    pub rul: f64,
}

/// Extracts features for every diagnostic of every (labelled) cell.
///
/// Diagnostics whose IC curve cannot be featurized are skipped with a warning.
pub fn featurize_fleet(fleet: &[CellHistory], ica: &IcaConfig) -> Result<Vec<LabeledSample>> {
    let mut rows = Vec::new();
    for cell in fleet {
        if cell.rul_by_diag.len() != cell.diagnostics.len() {
            return Err(Error::Validation(format!("cell {} is not labelled", cell.cell_id)));
        }
        for (i, diag) in cell.diagnostics.iter().enumerate() {
            match ica.features_for(diag) {
                Ok(features) => rows.push(LabeledSample {
                    cell_id: cell.cell_id.clone(),
                    cycle_number: diag.cycle_number,
                    features,
                    soh: cell.soh_by_diag[i],
                    rul: cell.rul_by_diag[i],
                }),
                Err(e) => log::warn!("skipping cell {} cycle {}: {e}", cell.cell_id, diag.cycle_number),
            }
        }
    }
    Ok(rows)
}

/// Keeps the rows a target's dataset is built from: SoH ≥ 0.8 for SoH,
/// cycles up to EOL + 400 for RUL.
pub fn select_rows(rows: &[LabeledSample], target: Target) -> Vec<LabeledSample> {
    rows.iter().filter(|r| target.retains(r)).cloned().collect()
}

pub fn build_regression_dataset(fleet: &[CellHistory], ica: &IcaConfig, target: Target) -> Result<Vec<LabeledSample>> {
    Ok(select_rows(&featurize_fleet(fleet, ica)?, target))
}

/// Groups rows by cell id, preserving row order within each cell.
pub fn rows_by_cell(rows: &[LabeledSample]) -> BTreeMap<String, Vec<LabeledSample>> {
    let mut map: BTreeMap<String, Vec<LabeledSample>> = BTreeMap::new();
    for r in rows {
        map.entry(r.cell_id.clone()).or_default().push(r.clone());
    }
    map
}

// ---------------------------------------------------------------------------
// Canonical CSV format

pub fn cells_path(dir: &Path) -> PathBuf {
    dir.join("cells.csv")
}

pub fn diagnostics_path(dir: &Path, cell_id: &str) -> PathBuf {
    dir.join(format!("diagnostics_{cell_id}.csv"))
}

/// Formats `x` with nine significant digits in plain decimal notation.
pub fn fmt_sig(x: f64) -> String {
    const DIGITS: i32 = 9;
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (DIGITS - 1 - magnitude).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.starts_with("-0") && s.trim_start_matches(['-', '0', '.']).is_empty() {
        return s[1..].to_string();
    }
    s
}

/// Loads every cell listed in `cells.csv`. Labels are not computed.
pub fn load_fleet(dataset_dir: &Path) -> Result<Vec<CellHistory>> {
    if !dataset_dir.is_dir() {
        return Err(Error::DatasetNotFound(dataset_dir.to_path_buf()));
    }
    let cells_file = cells_path(dataset_dir);
    if !cells_file.is_file() {
        return Err(Error::DatasetNotFound(cells_file));
    }
    let mut reader = csv::ReaderBuilder::new().from_path(&cells_file)?;
    let mut fleet = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i as u64 + 2;
        let record = record.map_err(|e| parse_err(&cells_file, line, e))?;
        let cell_id = record
            .get(0)
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| parse_err(&cells_file, line, "missing cell_id"))?
            .to_string();
        let rated = match record.get(1).map(str::trim) {
            None | Some("") => DEFAULT_RATED_CAPACITY_MAH,
            Some(v) => parse_f64(v, &cells_file, line)?,
        };
        let diagnostics = load_diagnostics(dataset_dir, &cell_id)?;
        fleet.push(CellHistory::new(cell_id, rated, diagnostics)?);
    }
    Ok(fleet)
}

fn parse_err(file: &Path, line: u64, msg: impl std::fmt::Display) -> Error {
    Error::Parse {
        file: file.to_path_buf(),
        line,
        msg: msg.to_string(),
    }
}

fn parse_f64(v: &str, file: &Path, line: u64) -> Result<f64> {
    v.trim()
        .parse::<f64>()
        .map_err(|e| parse_err(file, line, format!("{v:?}: {e}")))
}

fn load_diagnostics(dir: &Path, cell_id: &str) -> Result<Vec<DiagnosticCycle>> {
    let path = diagnostics_path(dir, cell_id);
    if !path.is_file() {
        return Err(Error::DatasetNotFound(path));
    }
    let mut reader = csv::ReaderBuilder::new().from_path(&path)?;
    let mut cycles: Vec<(u32, Vec<Sample>)> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i as u64 + 2;
        let record = record.map_err(|e| parse_err(&path, line, e))?;
        if record.len() != 6 {
            return Err(parse_err(
                &path,
                line,
                format!("expected 6 fields, found {}", record.len()),
            ));
        }
        let cycle: u32 = record[0]
            .trim()
            .parse()
            .map_err(|e| parse_err(&path, line, format!("cycle_number {:?}: {e}", &record[0])))?;
        let sample = Sample {
            time_s: parse_f64(&record[1], &path, line)?,
            voltage_v: parse_f64(&record[2], &path, line)?,
            current_a: parse_f64(&record[3], &path, line)?,
            charge_mah: parse_f64(&record[4], &path, line)?,
            temperature_c: parse_f64(&record[5], &path, line)?,
        };
        match cycles.last_mut() {
            Some((c, samples)) if *c == cycle => samples.push(sample),
            _ => {
                if cycles.iter().any(|(c, _)| *c == cycle) {
                    return Err(parse_err(&path, line, format!("rows of cycle {cycle} are not grouped")));
                }
                cycles.push((cycle, vec![sample]));
            }
        }
    }
    cycles
        .into_iter()
        .map(|(c, samples)| DiagnosticCycle::new(cell_id, c, samples))
        .collect()
}

/// Writes a fleet in the canonical format, nine significant digits per value.
pub fn write_fleet(dataset_dir: &Path, fleet: &[CellHistory]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dataset_dir)?;
    let mut written = Vec::new();
    let cells_file = cells_path(dataset_dir);
    let mut out = std::io::BufWriter::new(fs::File::create(&cells_file)?);
    writeln!(out, "cell_id,rated_capacity_mah")?;
    for cell in fleet {
        writeln!(out, "{},{}", cell.cell_id, fmt_sig(cell.rated_capacity_mah))?;
    }
    out.flush()?;
    written.push(cells_file);

    for cell in fleet {
        let path = diagnostics_path(dataset_dir, &cell.cell_id);
        let mut out = std::io::BufWriter::new(fs::File::create(&path)?);
        writeln!(out, "cycle_number,time_s,voltage_v,current_a,charge_mah,temperature_c")?;
        for d in &cell.diagnostics {
            for s in &d.samples {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    d.cycle_number,
                    fmt_sig(s.time_s),
                    fmt_sig(s.voltage_v),
                    fmt_sig(s.current_a),
                    fmt_sig(s.charge_mah),
                    fmt_sig(s.temperature_c)
                )?;
            }
        }
        out.flush()?;
        written.push(path);
    }
    Ok(written)
}
