//! Result files and the run manifest.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::fmt_sig;
use crate::error::Result;
use crate::eval::MetricsReport;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    /// The effective configuration as TOML.
    pub config: String,
    /// SHA-256 over the sorted input files; absent for dataset-free runs.
    pub dataset_fingerprint: Option<String>,
    pub files: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: String, dataset_fingerprint: Option<String>) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed,
            config,
            dataset_fingerprint,
            files: Vec::new(),
        }
    }
}

/// SHA-256 over every regular file directly inside `dir`, in name order.
/// Each file contributes its name, its length and its bytes.
pub fn dataset_fingerprint(dir: &Path) -> Result<String> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    entries.sort();
    let mut hasher = Sha256::new();
    let mut buf = Vec::new();
    for path in entries {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        buf.clear();
        fs::File::open(&path)?.read_to_end(&mut buf)?;
        hasher.update(name.as_bytes());
        hasher.update([0]);
        hasher.update((buf.len() as u64).to_le_bytes());
        hasher.update(&buf);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Writes `manifest.json` listing `files` (relative to `out_dir`) and returns
/// the full list including the manifest.
pub fn emit_report(out_dir: &Path, mut manifest: RunManifest, files: &[PathBuf]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    manifest.files = files
        .iter()
        .map(|f| f.strip_prefix(out_dir).unwrap_or(f).to_string_lossy().into_owned())
        .collect();
    let path = out_dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    let mut all = files.to_vec();
    all.push(path);
    Ok(all)
}

/// Per-split metrics of several models, errors in report units.
pub fn write_results_csv(path: &Path, reports: &[MetricsReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "model",
        "split",
        "test_cells",
        "mae_train",
        "mae_test",
        "max_error_test",
        "nmae_test",
    ])?;
    for r in reports {
        let s = r.target.report_scale();
        for m in &r.splits {
            w.write_record([
                r.model.clone(),
                m.split_id.to_string(),
                m.test_cells.join("+"),
                fmt_sig(m.mae_train * s),
                fmt_sig(m.mae_test * s),
                fmt_sig(m.max_error_test * s),
                fmt_sig(m.nmae_test),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row per model: the benchmark table.
pub fn write_summary_csv(path: &Path, reports: &[MetricsReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "model",
        "mae_train",
        "mae_test",
        "max_error_test",
        "nmae_test",
        "splits_ok",
        "splits_failed",
    ])?;
    for r in reports {
        let s = r.target.report_scale();
        w.write_record([
            r.model.clone(),
            fmt_sig(r.mae_train * s),
            fmt_sig(r.mae_test * s),
            fmt_sig(r.max_error_test * s),
            fmt_sig(r.nmae_test),
            r.splits.len().to_string(),
            r.failures.len().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Test-set predictions of every split.
pub fn write_predictions_csv(path: &Path, reports: &[MetricsReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["model", "split", "cell", "cycle", "truth", "prediction"])?;
    for r in reports {
        for m in &r.splits {
            for p in &m.test_predictions {
                w.write_record([
                    r.model.clone(),
                    m.split_id.to_string(),
                    p.cell_id.clone(),
                    p.cycle_number.to_string(),
                    fmt_sig(p.truth),
                    fmt_sig(p.prediction),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
