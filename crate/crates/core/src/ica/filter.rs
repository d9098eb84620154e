//! Butterworth low-pass design and zero-phase (forward-backward) filtering.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Digital IIR filter in transfer-function form, `a[0] == 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub order: usize,
    pub cutoff_hz: f64,
    pub sample_rate_hz: f64,
    pub numerator: Vec<f64>,
    pub denominator: Vec<f64>,
}

impl FilterSpec {
    /// Frequency response `H(e^{jω})` at `freq_hz`.
    pub fn response(&self, freq_hz: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz / self.sample_rate_hz;
        let z_inv = Complex64::from_polar(1.0, -w);
        let eval = |c: &[f64]| {
            c.iter()
                .rev()
                .fold(Complex64::new(0.0, 0.0), |acc, &ck| acc * z_inv + ck)
        };
        eval(&self.numerator) / eval(&self.denominator)
    }

    /// Number of samples the filter needs to forget its initial state.
    fn settling_len(&self) -> usize {
        (6.0 * self.sample_rate_hz / self.cutoff_hz).ceil() as usize
    }
}

/// Discrete Butterworth low-pass via the analog prototype and the bilinear
/// transform with frequency pre-warping. DC gain is exactly one.
pub fn design_lowpass(order: usize, cutoff_hz: f64, sample_rate_hz: f64) -> Result<FilterSpec> {
    if order == 0 {
        return Err(Error::Validation("filter order must be at least 1".into()));
    }
    if !(sample_rate_hz > 0.0) || !(cutoff_hz > 0.0 && cutoff_hz < sample_rate_hz / 2.0) {
        return Err(Error::Validation(format!(
            "cutoff {cutoff_hz} Hz must lie in (0, {}) Hz",
            sample_rate_hz / 2.0
        )));
    }
    let fs2 = 2.0 * sample_rate_hz;
    let warped = fs2 * (PI * cutoff_hz / sample_rate_hz).tan();
    let n = order as f64;
    let poles: Vec<Complex64> = (0..order)
        .map(|k| {
            let theta = PI * (2.0 * k as f64 + 1.0 + n) / (2.0 * n);
            let analog = Complex64::from_polar(warped, theta);
            (fs2 + analog) / (fs2 - analog)
        })
        .collect();
    let denominator = real_poly(&poles);
    let zeros = vec![Complex64::new(-1.0, 0.0); order];
    let mut numerator = real_poly(&zeros);
    let gain = denominator.iter().sum::<f64>() / numerator.iter().sum::<f64>();
    numerator.iter_mut().for_each(|c| *c *= gain);
    Ok(FilterSpec {
        order,
        cutoff_hz,
        sample_rate_hz,
        numerator,
        denominator,
    })
}

/// Coefficients (highest power first) of `Π (z - r)`, imaginary parts dropped.
fn real_poly(roots: &[Complex64]) -> Vec<f64> {
    let mut c = vec![Complex64::new(1.0, 0.0)];
    for &r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); c.len() + 1];
        for (i, &ci) in c.iter().enumerate() {
            next[i] += ci;
            next[i + 1] -= ci * r;
        }
        c = next;
    }
    c.into_iter().map(|z| z.re).collect()
}

/// Steady-state direct-form-II-transposed state for a unit step input.
fn steady_state(spec: &FilterSpec) -> Result<Vec<f64>> {
    let (b, a) = (&spec.numerator, &spec.denominator);
    let n = a.len() - 1;
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut m = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        m[(i, 0)] += a[i + 1];
        if i + 1 < n {
            m[(i, i + 1)] -= 1.0;
        }
    }
    let rhs = DVector::from_iterator(n, (0..n).map(|i| b[i + 1] - a[i + 1] * b[0]));
    m.lu()
        .solve(&rhs)
        .map(|v| v.iter().copied().collect())
        .ok_or_else(|| Error::Numerical("singular steady-state system".into()))
}

fn lfilter(spec: &FilterSpec, x: &[f64], zi: &[f64]) -> Vec<f64> {
    let (b, a) = (&spec.numerator, &spec.denominator);
    let n = a.len() - 1;
    let mut z = zi.to_vec();
    x.iter()
        .map(|&xk| {
            let y = b[0] * xk + z.first().copied().unwrap_or(0.0);
            for i in 0..n {
                let next = if i + 1 < n { z[i + 1] } else { 0.0 };
                z[i] = b[i + 1] * xk + next - a[i + 1] * y;
            }
            y
        })
        .collect()
}

/// One forward pass started from the steady state of the first sample,
/// followed by a pass over the reversed output.
fn forward_backward(spec: &FilterSpec, x: &[f64], zi: &[f64]) -> Vec<f64> {
    let scaled = |v: f64| zi.iter().map(|z| z * v).collect::<Vec<_>>();
    let mut y = lfilter(spec, x, &scaled(x[0]));
    y.reverse();
    let mut y = lfilter(spec, &y, &scaled(y[0]));
    y.reverse();
    y
}

/// Zero-phase filtering of a uniformly sampled signal.
///
/// The signal is extended at both ends by odd reflection, run through the
/// filter forwards then backwards and, separately, backwards then forwards;
/// the two results are averaged so that filtering commutes exactly with
/// time reversal. The output has the input's length.
pub fn zero_phase_filter(spec: &FilterSpec, signal: &[f64]) -> Result<Vec<f64>> {
    let n = signal.len();
    let min_pad = 3 * spec.order;
    if n <= min_pad {
        return Err(Error::Validation(format!(
            "signal of length {n} too short for order-{} zero-phase filtering (needs > {min_pad})",
            spec.order
        )));
    }
    let pad = spec.settling_len().max(min_pad).min(n - 1);
    let (first, last) = (signal[0], signal[n - 1]);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * first - signal[i]));
    ext.extend_from_slice(signal);
    ext.extend((1..=pad).map(|i| 2.0 * last - signal[n - 1 - i]));

    let zi = steady_state(spec)?;
    let fb = forward_backward(spec, &ext, &zi);
    let mut rev = ext.clone();
    rev.reverse();
    let mut bf = forward_backward(spec, &rev, &zi);
    bf.reverse();
    Ok(fb[pad..pad + n]
        .iter()
        .zip(&bf[pad..pad + n])
        .map(|(p, q)| 0.5 * (p + q))
        .collect())
}
