//! Polynomial least-squares regressors on standardized features.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::Scaler;

/// Smallest accepted ratio between Cholesky pivots of the column-scaled
/// normal matrix; below this the design is treated as rank-deficient.
const RANK_TOLERANCE: f64 = 1e-7;

/// Monomial basis over standardized inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyBasis {
    pub degree: usize,
    pub interactions: bool,
}

impl PolyBasis {
    pub fn size(&self, dims: usize) -> usize {
        let pairs = if self.interactions {
            dims * dims.saturating_sub(1) / 2
        } else {
            0
        };
        1 + dims * self.degree + pairs
    }

    /// `[1, x_1..x_1^p, .., x_d..x_d^p, x_1 x_2, .., x_{d-1} x_d]`.
    pub fn expand(&self, z: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.size(z.len()));
        out.push(1.0);
        for &v in z {
            let mut p = 1.0;
            for _ in 0..self.degree {
                p *= v;
                out.push(p);
            }
        }
        if self.interactions {
            for i in 0..z.len() {
                for j in i + 1..z.len() {
                    out.push(z[i] * z[j]);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyModel {
    pub basis: PolyBasis,
    /// Indices into the feature vector used as inputs.
    pub columns: Vec<usize>,
    pub scalers: Vec<Scaler>,
    /// Coefficients of the expanded basis in original target units.
    pub coefficients: Vec<f64>,
}

impl PolyModel {
    pub fn predict(&self, features: &[f64]) -> f64 {
        let z: Vec<f64> = self
            .columns
            .iter()
            .zip(&self.scalers)
            .map(|(&c, s)| s.apply(features[c]))
            .collect();
        self.basis
            .expand(&z)
            .iter()
            .zip(&self.coefficients)
            .map(|(a, b)| a * b)
            .sum()
    }
}

/// Fits `y ≈ Φ(z) β` by normal equations on unit-norm columns with an
/// optional ridge term.
pub fn fit_poly(
    inputs: &[Vec<f64>],
    targets: &[f64],
    columns: &[usize],
    basis: PolyBasis,
    ridge: f64,
) -> Result<PolyModel> {
    let n = targets.len();
    if inputs.len() != n {
        return Err(Error::Validation("inputs and targets differ in length".into()));
    }
    if columns.is_empty() || basis.degree == 0 {
        return Err(Error::Validation(
            "polynomial needs at least one input and degree ≥ 1".into(),
        ));
    }
    if ridge < 0.0 || !ridge.is_finite() {
        return Err(Error::Validation(format!("ridge must be non-negative, got {ridge}")));
    }
    let p = basis.size(columns.len());
    if n <= p && ridge == 0.0 || n < p {
        return Err(Error::Fit(format!("{n} samples for a {p}-term polynomial basis")));
    }
    let scalers: Vec<Scaler> = columns
        .iter()
        .map(|&c| Scaler::fit(inputs.iter().map(move |r| r[c])))
        .collect();
    let design = DMatrix::from_fn(n, p, |i, j| {
        let z: Vec<f64> = columns
            .iter()
            .zip(&scalers)
            .map(|(&c, s)| s.apply(inputs[i][c]))
            .collect();
        basis.expand(&z)[j]
    });
    let norms: Vec<f64> = (0..p)
        .map(|j| {
            let nrm = design.column(j).norm();
            if nrm > 0.0 {
                nrm
            } else {
                1.0
            }
        })
        .collect();
    let scaled = DMatrix::from_fn(n, p, |i, j| design[(i, j)] / norms[j]);
    let mut normal = scaled.transpose() * &scaled;
    for j in 0..p {
        normal[(j, j)] += ridge;
    }
    let rhs = scaled.transpose() * DVector::from_column_slice(targets);
    let chol = normal
        .cholesky()
        .ok_or_else(|| Error::Fit("rank-deficient polynomial design".into()))?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    if !(lo > RANK_TOLERANCE * hi) {
        return Err(Error::Fit("rank-deficient polynomial design".into()));
    }
    let beta = chol.solve(&rhs);
    Ok(PolyModel {
        basis,
        columns: columns.to_vec(),
        scalers,
        coefficients: beta.iter().zip(&norms).map(|(b, s)| b / s).collect(),
    })
}
