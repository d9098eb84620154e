use serde::{Deserialize, Serialize};

use super::filter::{zero_phase_filter, FilterSpec};
use crate::data::{DiagnosticCycle, Sample};
use crate::error::{Error, Result};

/// Relative deviation from the median current tolerated inside the CC segment.
const CC_CURRENT_TOLERANCE: f64 = 0.02;
/// CC segment ends just below the 4.2 V charge cut-off.
const CC_VOLTAGE_LIMIT: f64 = 4.2 - 0.005;
/// Voltage steps below this are merged with the following step.
pub const MIN_VOLTAGE_STEP: f64 = 10e-6;
const AS_PER_MAH: f64 = 3.6;

/// Incremental-capacity curve, voltage strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcCurve {
    pub voltage_v: Vec<f64>,
    pub ic_mah_per_v: Vec<f64>,
}

impl IcCurve {
    pub fn len(&self) -> usize {
        self.voltage_v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voltage_v.is_empty()
    }

    /// Trapezoidal `∫ IC dV` in mAh.
    pub fn integral_mah(&self) -> f64 {
        self.voltage_v
            .windows(2)
            .zip(self.ic_mah_per_v.windows(2))
            .map(|(v, ic)| 0.5 * (ic[0] + ic[1]) * (v[1] - v[0]))
            .sum()
    }
}

/// Constant-current part of a charge record.
#[derive(Debug, Clone, PartialEq)]
pub struct CcSegment {
    pub samples: Vec<Sample>,
    pub current_a: f64,
}

impl CcSegment {
    pub fn charge_throughput_mah(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.charge_mah - a.charge_mah,
            _ => 0.0,
        }
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Longest contiguous run of samples whose current stays within 2% of the
/// median charging current and whose voltage is below the CV threshold.
pub fn extract_cc_segment(cycle: &DiagnosticCycle) -> Result<CcSegment> {
    let mut charging: Vec<f64> = cycle.samples.iter().map(|s| s.current_a).filter(|&i| i > 0.0).collect();
    if charging.is_empty() {
        return Err(Error::DegenerateCurve(format!(
            "cell {} cycle {}: no charging samples",
            cycle.cell_id, cycle.cycle_number
        )));
    }
    let med = median(&mut charging);
    let in_cc = |s: &Sample| (s.current_a - med).abs() <= CC_CURRENT_TOLERANCE * med && s.voltage_v < CC_VOLTAGE_LIMIT;
    let mut best = 0..0;
    let mut start = None;
    for (k, s) in cycle.samples.iter().enumerate() {
        match (in_cc(s), start) {
            (true, None) => start = Some(k),
            (false, Some(s0)) => {
                if k - s0 > best.len() {
                    best = s0..k;
                }
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s0) = start {
        if cycle.samples.len() - s0 > best.len() {
            best = s0..cycle.samples.len();
        }
    }
    Ok(CcSegment {
        samples: cycle.samples[best].to_vec(),
        current_a: med,
    })
}

/// Centered moving average over sample index; the window shrinks at the
/// edges.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let n = values.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for v in values {
        prefix.push(prefix.last().unwrap() + v);
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// IC curve of the CC segment of `cycle`.
///
/// The voltage trace is zero-phase filtered, then each step contributes
/// `I·Δt/ΔV` at its midpoint voltage. Steps rising less than 10 µV are merged
/// into the next one. The result is smoothed with a centered moving average
/// of `smooth_window` points and clamped at zero.
pub fn compute_ic_curve(cycle: &DiagnosticCycle, spec: &FilterSpec, smooth_window: usize) -> Result<IcCurve> {
    if smooth_window == 0 || smooth_window % 2 == 0 {
        return Err(Error::Validation(format!(
            "smoothing window must be odd and positive, got {smooth_window}"
        )));
    }
    let segment = extract_cc_segment(cycle)?;
    ic_curve_from_samples(&segment.samples, spec, smooth_window).map_err(|e| match e {
        Error::DegenerateCurve(msg) => {
            Error::DegenerateCurve(format!("cell {} cycle {}: {msg}", cycle.cell_id, cycle.cycle_number))
        }
        other => other,
    })
}

pub(crate) fn ic_curve_from_samples(samples: &[Sample], spec: &FilterSpec, smooth_window: usize) -> Result<IcCurve> {
    if samples.len() <= 3 * spec.order {
        return Err(Error::DegenerateCurve(format!(
            "CC segment has only {} samples",
            samples.len()
        )));
    }
    let raw: Vec<f64> = samples.iter().map(|s| s.voltage_v).collect();
    let volts = zero_phase_filter(spec, &raw)?;

    let mut voltage = Vec::new();
    let mut ic = Vec::new();
    let mut v_start = volts[0];
    let mut charge_as = 0.0;
    for k in 1..samples.len() {
        let dt = samples[k].time_s - samples[k - 1].time_s;
        charge_as += 0.5 * (samples[k].current_a + samples[k - 1].current_a) * dt;
        let dv = volts[k] - v_start;
        if dv < MIN_VOLTAGE_STEP {
            continue;
        }
        voltage.push(0.5 * (volts[k] + v_start));
        ic.push(charge_as / AS_PER_MAH / dv);
        v_start = volts[k];
        charge_as = 0.0;
    }
    if voltage.len() < 2 {
        return Err(Error::DegenerateCurve(format!(
            "only {} voltage steps above {MIN_VOLTAGE_STEP} V",
            voltage.len()
        )));
    }
    let ic_mah_per_v = moving_average(&ic, smooth_window)
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();
    Ok(IcCurve {
        voltage_v: voltage,
        ic_mah_per_v,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ica::filter::design_lowpass;

    fn ramp_cycle(offset_s: f64) -> DiagnosticCycle {
        let samples = (0..=3600)
            .map(|k| {
                let t = k as f64;
                Sample {
                    time_s: t + offset_s,
                    voltage_v: 3.0 + t / 3600.0,
                    current_a: 0.74,
                    charge_mah: 0.74 * t / 3.6,
                    temperature_c: 25.0,
                }
            })
            .collect();
        DiagnosticCycle::new("ramp", 0, samples).unwrap()
    }

    #[test]
    fn linear_ramp_gives_flat_ic() {
        let spec = design_lowpass(4, 0.01, 1.0).unwrap();
        let curve = compute_ic_curve(&ramp_cycle(0.0), &spec, 25).unwrap();
        // 0.74 A over 3600 s and 1 V: 2664 A·s/V = 740 mAh/V.
        for &v in &curve.ic_mah_per_v {
            assert!((v - 740.0).abs() < 1e-3, "{v}");
        }
        assert!(curve.voltage_v.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn invariant_to_time_shift() {
        let spec = design_lowpass(4, 0.01, 1.0).unwrap();
        let a = compute_ic_curve(&ramp_cycle(0.0), &spec, 25).unwrap();
        let b = compute_ic_curve(&ramp_cycle(12345.0), &spec, 25).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.ic_mah_per_v.iter().zip(&b.ic_mah_per_v) {
            assert!((x - y).abs() < 1e-6 * x.abs());
        }
    }

    #[test]
    fn cc_segment_drops_cv_tail() {
        let mut samples = ramp_cycle(0.0).samples;
        samples.truncate(3000);
        let last = *samples.last().unwrap();
        for k in 1..300 {
            samples.push(Sample {
                time_s: last.time_s + k as f64,
                voltage_v: 4.2,
                current_a: 0.74 * (-(k as f64) / 100.0).exp(),
                charge_mah: last.charge_mah + k as f64 * 0.01,
                temperature_c: 25.0,
            });
        }
        let cycle = DiagnosticCycle::new("c", 0, samples).unwrap();
        let seg = extract_cc_segment(&cycle).unwrap();
        assert_eq!(seg.samples.len(), 3000);
        assert!((seg.current_a - 0.74).abs() < 1e-12);
    }

    #[test]
    fn flat_voltage_is_degenerate() {
        let samples = (0..100)
            .map(|k| Sample {
                time_s: k as f64,
                voltage_v: 3.7,
                current_a: 0.74,
                charge_mah: k as f64 * 0.2,
                temperature_c: 25.0,
            })
            .collect();
        let cycle = DiagnosticCycle::new("c", 0, samples).unwrap();
        let spec = design_lowpass(4, 0.01, 1.0).unwrap();
        assert!(matches!(
            compute_ic_curve(&cycle, &spec, 25),
            Err(Error::DegenerateCurve(_))
        ));
    }

    #[test]
    fn moving_average_edges_shrink() {
        let y = moving_average(&[1.0, 2.0, 3.0, 4.0, 5.0], 3);
        assert_eq!(y, vec![1.5, 2.0, 3.0, 4.0, 4.5]);
    }
}
