use serde::{Deserialize, Serialize};

use super::curve::IcCurve;
use crate::error::{Error, Result};

/// Open voltage window for features F3–F5.
pub const FEATURE_WINDOW_V: (f64, f64) = (3.5, 3.65);
pub const FEATURE_NAMES: [&str; 5] = ["f1", "f2", "f3", "f4", "f5"];

/// The five scalar IC features.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    /// Global IC peak, mAh/V.
    pub f1_ic_peak: f64,
    /// Voltage at the global peak.
    pub f2_v_at_peak: f64,
    /// Largest IC inside the window, mAh/V.
    pub f3_ic_max_window: f64,
    /// Largest positive dIC/dV inside the window, (mAh/V)/V.
    pub f4_slope_max_window: f64,
    /// Voltage at F4.
    pub f5_v_at_slope_max: f64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; 5] {
        [
            self.f1_ic_peak,
            self.f2_v_at_peak,
            self.f3_ic_max_window,
            self.f4_slope_max_window,
            self.f5_v_at_slope_max,
        ]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self {
            f1_ic_peak: a[0],
            f2_v_at_peak: a[1],
            f3_ic_max_window: a[2],
            f4_slope_max_window: a[3],
            f5_v_at_slope_max: a[4],
        }
    }
}

/// First index of the maximum; voltage is increasing so ties resolve toward
/// the lower voltage.
fn argmax(values: impl Iterator<Item = (usize, f64)>) -> Option<(usize, f64)> {
    values.fold(None, |best, (i, v)| match best {
        Some((_, b)) if v <= b => best,
        _ => Some((i, v)),
    })
}

pub fn extract_features(curve: &IcCurve) -> Result<FeatureVector> {
    let (v, ic) = (&curve.voltage_v, &curve.ic_mah_per_v);
    if v.len() < 5 {
        return Err(Error::DegenerateCurve(format!("curve has only {} points", v.len())));
    }
    let (lo, hi) = FEATURE_WINDOW_V;
    let window: Vec<usize> = (0..v.len()).filter(|&i| v[i] > lo && v[i] < hi).collect();
    if window.is_empty() {
        return Err(Error::FeatureWindow(format!(
            "curve spans [{:.3}, {:.3}] V, window ({lo}, {hi}) V",
            v[0],
            v[v.len() - 1]
        )));
    }

    let (peak, f1) = argmax(ic.iter().copied().enumerate()).expect("non-empty curve");
    let (_, f3) = argmax(window.iter().map(|&i| (i, ic[i]))).expect("non-empty window");
    let slopes = window
        .iter()
        .filter(|&&i| i > 0 && i + 1 < v.len())
        .map(|&i| (i, (ic[i + 1] - ic[i - 1]) / (v[i + 1] - v[i - 1])))
        .filter(|&(_, s)| s > 0.0);
    let (slope_at, f4) = argmax(slopes).ok_or(Error::SlopeUnavailable)?;

    Ok(FeatureVector {
        f1_ic_peak: f1,
        f2_v_at_peak: v[peak],
        f3_ic_max_window: f3,
        f4_slope_max_window: f4,
        f5_v_at_slope_max: v[slope_at],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve_from(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> IcCurve {
        let voltage_v: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
        let ic_mah_per_v = voltage_v.iter().map(|&x| f(x)).collect();
        IcCurve {
            voltage_v,
            ic_mah_per_v,
        }
    }

    #[test]
    fn unique_peak_located_exactly() {
        // Grid 3.30, 3.31, ..., 4.20 contains 3.85.
        let c = curve_from(
            |x| 3000.0 * (-(x - 3.85f64).powi(2) / 0.002).exp() + 200.0,
            3.3,
            4.2,
            91,
        );
        let f = extract_features(&c).unwrap();
        assert_eq!(f.f1_ic_peak, c.ic_mah_per_v[55]);
        assert_eq!(f.f2_v_at_peak, c.voltage_v[55]);
        assert!((f.f2_v_at_peak - 3.85).abs() < 1e-12);
        assert!(f.f1_ic_peak >= f.f3_ic_max_window);
    }

    #[test]
    fn monotone_window_peaks_at_upper_edge() {
        let c = curve_from(|x| 100.0 + 1000.0 * (x - 3.3), 3.3, 4.0, 701);
        let f = extract_features(&c).unwrap();
        let last_in_window = c.voltage_v.iter().rposition(|&v| v < FEATURE_WINDOW_V.1).unwrap();
        assert_eq!(f.f3_ic_max_window, c.ic_mah_per_v[last_in_window]);
    }

    #[test]
    fn window_not_covered() {
        let c = curve_from(|x| x, 3.7, 4.1, 50);
        assert!(matches!(extract_features(&c), Err(Error::FeatureWindow(_))));
    }

    #[test]
    fn no_positive_slope_in_window() {
        let c = curve_from(|x| 5000.0 - 1000.0 * x, 3.3, 4.1, 81);
        assert!(matches!(extract_features(&c), Err(Error::SlopeUnavailable)));
    }

    #[test]
    fn ties_break_toward_lower_voltage() {
        let c = IcCurve {
            voltage_v: vec![3.40, 3.52, 3.55, 3.60, 3.70, 3.80],
            ic_mah_per_v: vec![100.0, 200.0, 500.0, 500.0, 900.0, 900.0],
        };
        let f = extract_features(&c).unwrap();
        assert_eq!(f.f2_v_at_peak, 3.70);
    }

    #[test]
    fn appending_lower_points_outside_span_is_harmless() {
        let c = curve_from(
            |x| 3000.0 * (-(x - 3.85f64).powi(2) / 0.01).exp() + 300.0,
            3.3,
            4.1,
            161,
        );
        let base = extract_features(&c).unwrap();
        let mut ext = c.clone();
        ext.voltage_v.insert(0, 3.2);
        ext.ic_mah_per_v.insert(0, 50.0);
        ext.voltage_v.push(4.15);
        ext.ic_mah_per_v.push(10.0);
        assert_eq!(extract_features(&ext).unwrap(), base);
    }
}
