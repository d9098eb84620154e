//! Incremental-capacity analysis: filtering, IC curves, features and rank
//! correlation.

mod curve;
mod features;
mod filter;
mod stats;

use serde::{Deserialize, Serialize};

pub use curve::{compute_ic_curve, extract_cc_segment, moving_average, CcSegment, IcCurve, MIN_VOLTAGE_STEP};
pub use features::{extract_features, FeatureVector, FEATURE_NAMES, FEATURE_WINDOW_V};
pub use filter::{design_lowpass, zero_phase_filter, FilterSpec};
pub use stats::{average_ranks, spearman};

use crate::data::DiagnosticCycle;
use crate::error::Result;

/// Filter and smoothing settings for IC extraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IcaConfig {
    pub filter_order: usize,
    pub cutoff_hz: f64,
    pub sample_rate_hz: f64,
    pub smooth_window: usize,
}

impl Default for IcaConfig {
    fn default() -> Self {
        Self {
            filter_order: 4,
            cutoff_hz: 0.01,
            sample_rate_hz: 1.0,
            smooth_window: 25,
        }
    }
}

impl IcaConfig {
    pub fn filter(&self) -> Result<FilterSpec> {
        design_lowpass(self.filter_order, self.cutoff_hz, self.sample_rate_hz)
    }

    pub fn curve_for(&self, cycle: &DiagnosticCycle) -> Result<IcCurve> {
        compute_ic_curve(cycle, &self.filter()?, self.smooth_window)
    }

    pub fn features_for(&self, cycle: &DiagnosticCycle) -> Result<FeatureVector> {
        extract_features(&self.curve_for(cycle)?)
    }
}
