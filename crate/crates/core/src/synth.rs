//! Deterministic synthetic fleet for dataset-free testing.
//!
//! Each cell follows a stretched-exponential capacity fade
//! `SoH(n) = exp(-(n/τ)^β)` reaching 0.8 at a programmed cycle. Diagnostic
//! charges are CC-CV traces whose CC voltage curve comes from a three-peak
//! incremental-capacity template: the peaks broaden, shrink and drift to
//! higher voltage as the cell ages, so every IC feature tracks SoH.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{CellHistory, DiagnosticCycle, Sample, DEFAULT_RATED_CAPACITY_MAH, DEFAULT_SOH_EOL};
use crate::error::{Error, Result};

const CC_START_V: f64 = 3.35;
const CHARGE_CUTOFF_V: f64 = 4.2;
const VOLTAGE_NOISE_V: f64 = 1e-3;
const CHAMBER_TEMP_C: f64 = 40.0;
const DIAG_INTERVAL: u32 = 100;
const EOL_RANGE: (f64, f64) = (3300.0, 5300.0);
const GRID_POINTS: usize = 6000;

/// Programmed fade of one synthetic cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FadeCurve {
    pub tau: f64,
    pub beta: f64,
    /// Cycle at which the programmed SoH equals 0.8.
    pub n_eol: f64,
}

impl FadeCurve {
    pub fn with_eol(n_eol: f64, beta: f64) -> Self {
        let tau = n_eol / (1.0 / DEFAULT_SOH_EOL).ln().powf(1.0 / beta);
        Self { tau, beta, n_eol }
    }

    pub fn soh(&self, cycle: f64) -> f64 {
        (-(cycle / self.tau).powf(self.beta)).exp()
    }
}

/// Cell-to-cell variation of the IC template.
#[derive(Debug, Clone, Copy, PartialEq)]
struct CellShape {
    voltage_offset: f64,
    sharpness: f64,
    window_peak_weight: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticFleet {
    pub cells: Vec<CellHistory>,
    pub fades: Vec<FadeCurve>,
}

impl SyntheticFleet {
    pub fn generate(n_cells: usize, seed: u64) -> Result<Self> {
        if n_cells < 1 {
            return Err(Error::Validation("synthetic fleet needs at least one cell".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let width = (EOL_RANGE.1 - EOL_RANGE.0) / n_cells as f64;
        let mut eols: Vec<f64> = (0..n_cells)
            .map(|i| EOL_RANGE.0 + width * (i as f64 + rng.random_range(0.1..0.9)))
            .collect();
        // Fisher-Yates so cell order does not encode lifetime.
        for i in (1..n_cells).rev() {
            let j = rng.random_range(0..=i);
            eols.swap(i, j);
        }

        let mut cells = Vec::with_capacity(n_cells);
        let mut fades = Vec::with_capacity(n_cells);
        for (i, &n_eol) in eols.iter().enumerate() {
            let fade = FadeCurve::with_eol(n_eol, rng.random_range(0.9..1.5));
            let shape = CellShape {
                voltage_offset: rng.random_range(-0.004..0.004),
                sharpness: rng.random_range(0.97..1.03),
                window_peak_weight: rng.random_range(0.42..0.48),
            };
            let cell_seed: u64 = rng.random();
            cells.push(synth_cell(&format!("cell{}", i + 1), fade, shape, cell_seed)?);
            fades.push(fade);
        }
        Ok(Self { cells, fades })
    }
}

/// Convenience wrapper returning only the cell histories.
pub fn generate_synthetic_fleet(n_cells: usize, seed: u64) -> Result<Vec<CellHistory>> {
    Ok(SyntheticFleet::generate(n_cells, seed)?.cells)
}

fn synth_cell(cell_id: &str, fade: FadeCurve, shape: CellShape, seed: u64) -> Result<CellHistory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let last_cycle = fade.n_eol + 500.0;
    let mut diagnostics = Vec::new();
    let mut cycle = 0u32;
    loop {
        let soh = fade.soh(cycle as f64);
        let samples = charge_trace(soh, shape, &mut rng);
        diagnostics.push(DiagnosticCycle::new(cell_id, cycle, samples)?);
        if cycle as f64 >= last_cycle && soh < 0.78 {
            break;
        }
        cycle += DIAG_INTERVAL;
    }
    CellHistory::new(cell_id, DEFAULT_RATED_CAPACITY_MAH, diagnostics)
}

fn gauss(v: f64, mu: f64, w: f64) -> f64 {
    let z = (v - mu) / w;
    (-0.5 * z * z).exp()
}

/// Unnormalized IC template at aging `a = 1 - SoH`.
fn ic_template(v: f64, a: f64, shape: CellShape) -> f64 {
    let dv = shape.voltage_offset;
    let s = shape.sharpness;
    let main = gauss(v, 3.86 + 0.30 * a + dv, (0.035 + 0.10 * a) / s);
    let window = shape.window_peak_weight * (1.0 - 1.5 * a) * gauss(v, 3.60 + 0.25 * a + dv, (0.025 + 0.03 * a) / s);
    let upper = 0.35 * gauss(v, 4.08 + 0.10 * a + dv, 0.04);
    0.12 + main + window + upper
}

/// CC-CV charge from empty at 1C with the CC voltage shaped by the IC
/// template; ends when the CV current falls to C/20 with the charge counter
/// exactly at `soh × rated capacity`.
fn charge_trace(soh: f64, shape: CellShape, rng: &mut ChaCha8Rng) -> Vec<Sample> {
    let rated = DEFAULT_RATED_CAPACITY_MAH;
    let capacity = soh * rated;
    let aging = 1.0 - soh;
    let current = rated / 1000.0;
    let cc_charge = capacity * (0.90 - 0.4 * aging);
    let v_start = CC_START_V + 0.1 * aging;

    // Cumulative charge on a fine voltage grid, scaled to the CC charge.
    let dv = (CHARGE_CUTOFF_V - v_start) / (GRID_POINTS - 1) as f64;
    let grid_v: Vec<f64> = (0..GRID_POINTS).map(|i| v_start + dv * i as f64).collect();
    let mut grid_q = vec![0.0; GRID_POINTS];
    for i in 1..GRID_POINTS {
        let f0 = ic_template(grid_v[i - 1], aging, shape);
        let f1 = ic_template(grid_v[i], aging, shape);
        grid_q[i] = grid_q[i - 1] + 0.5 * (f0 + f1) * dv;
    }
    let scale = cc_charge / grid_q[GRID_POINTS - 1];
    grid_q.iter_mut().for_each(|q| *q *= scale);

    let noise = Normal::new(0.0, VOLTAGE_NOISE_V).expect("valid sigma");
    let mut samples = Vec::new();
    let mut seg = 1;
    let mut t = 0.0;
    loop {
        let q = current * t / 3.6;
        if q >= cc_charge {
            break;
        }
        while grid_q[seg] < q {
            seg += 1;
        }
        let frac = (q - grid_q[seg - 1]) / (grid_q[seg] - grid_q[seg - 1]);
        let v = grid_v[seg - 1] + frac * dv;
        samples.push(Sample {
            time_s: t,
            voltage_v: v + noise.sample(rng),
            current_a: current,
            charge_mah: q,
            temperature_c: CHAMBER_TEMP_C + 1.5 * q / capacity + 0.05 * noise.sample(rng) / VOLTAGE_NOISE_V,
        });
        t += 1.0;
    }

    let t_cc = cc_charge * 3.6 / current;
    let tau = (capacity - cc_charge) * 3.6 / (0.95 * current);
    let t_end = t_cc + tau * 20f64.ln();
    let cv_point = |t: f64, q: f64, rng: &mut ChaCha8Rng| Sample {
        time_s: t,
        voltage_v: CHARGE_CUTOFF_V + 0.2 * noise.sample(rng),
        current_a: current * (-(t - t_cc) / tau).exp(),
        charge_mah: q,
        temperature_c: CHAMBER_TEMP_C + 1.5 + 0.05 * noise.sample(rng) / VOLTAGE_NOISE_V,
    };
    while t < t_end {
        let q = cc_charge + current * tau / 3.6 * (1.0 - (-(t - t_cc) / tau).exp());
        samples.push(cv_point(t, q, rng));
        t += 1.0;
    }
    let mut last = cv_point(t_end, capacity, rng);
    if let Some(prev) = samples.last() {
        if last.time_s <= prev.time_s {
            last.time_s = prev.time_s + 1e-3;
        }
    }
    samples.push(last);
    samples
}
