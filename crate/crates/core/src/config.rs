//! Run configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{ModelParams, RegressorSpec};
use crate::data::Target;
use crate::error::{Error, Result};
use crate::ica::IcaConfig;
use crate::monitoring::StrategyConfig;

/// Overrides `dataset_dir` when set.
pub const DATASET_DIR_ENV: &str = "BATTERY_DATASET_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub target: Target,
    pub seed: u64,
    pub ica: IcaConfig,
    pub strategy: StrategyConfig,
    /// Regressors benchmarked by `evaluate`; the seven defaults when empty.
    pub regressors: Vec<RegressorSpec>,
    /// SoH estimator used inside the monitoring loop.
    pub soh_model: RegressorSpec,
    pub k_values: Vec<f64>,
    /// GPRn epoch candidates scored by `sweep`.
    pub epoch_candidates: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset_dir: None,
            output_dir: PathBuf::from("out"),
            target: Target::Soh,
            seed: 7,
            ica: IcaConfig::default(),
            strategy: StrategyConfig::default(),
            regressors: Vec::new(),
            soh_model: RegressorSpec::new(ModelParams::Svr(Default::default()), 7),
            k_values: vec![0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0],
            epoch_candidates: vec![20],
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.ica.filter()?;
        if self.ica.smooth_window == 0 || self.ica.smooth_window % 2 == 0 {
            return Err(Error::Config(format!(
                "ica.smooth_window must be odd, got {}",
                self.ica.smooth_window
            )));
        }
        self.strategy.validate()?;
        self.soh_model.model.validate()?;
        for r in &self.regressors {
            r.model.validate()?;
        }
        if self.k_values.iter().any(|k| !(*k >= 0.0 && k.is_finite())) {
            return Err(Error::Config("k_values must be finite and ≥ 0".into()));
        }
        if self.epoch_candidates.is_empty() {
            return Err(Error::Config("epoch_candidates must not be empty".into()));
        }
        Ok(())
    }

    /// Regressors to benchmark, seeded from the run seed when unset.
    pub fn benchmark_specs(&self) -> Vec<RegressorSpec> {
        if self.regressors.is_empty() {
            RegressorSpec::benchmark_suite(self.seed)
        } else {
            self.regressors.clone()
        }
    }

    /// Dataset directory: the environment override wins over the file value.
    pub fn resolve_dataset_dir(&self) -> Option<PathBuf> {
        std::env::var_os(DATASET_DIR_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from)
            .or_else(|| self.dataset_dir.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(RunConfig::from_toml("bogus = 1"), Err(Error::Config(_))));
        assert!(RunConfig::from_toml("[strategy]\nkk = 2").is_err());
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = RunConfig::from_toml("target = \"rul\"\n[strategy]\nk = 1.5\n").unwrap();
        assert_eq!(cfg.target, Target::Rul);
        assert_eq!(cfg.strategy.k, 1.5);
        assert_eq!(cfg.strategy.n_min, 40.0);
        assert_eq!(cfg.benchmark_specs().len(), 7);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::from_toml("[ica]\nsmooth_window = 24\n").is_err());
        assert!(RunConfig::from_toml("[ica]\ncutoff_hz = 0.7\n").is_err());
        assert!(RunConfig::from_toml("k_values = [-1.0]\n").is_err());
    }
}
