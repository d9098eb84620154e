//! ε-insensitive support vector regression solved in the dual by SMO with
//! second-order working-set selection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoSettings {
    pub c: f64,
    pub epsilon: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

/// Solution of the dual: `f(x) = Σ coef_i K(x_i, x) + bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrSolution {
    /// `α_i - α*_i` per training sample.
    pub coef: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    /// `α_i + α*_i` per training sample (used for the dual objective).
    pub alpha_sum: Vec<f64>,
}

impl SvrSolution {
    pub fn support_count(&self) -> usize {
        self.coef.iter().filter(|c| **c != 0.0).count()
    }

    /// `½ coefᵀ K coef + C Σ max(0, |y - f| - ε)`.
    pub fn primal_objective(&self, gram: &[Vec<f64>], y: &[f64], s: &SmoSettings) -> f64 {
        let n = y.len();
        let mut quad = 0.0;
        let mut loss = 0.0;
        for i in 0..n {
            let kc: f64 = (0..n).map(|j| gram[i][j] * self.coef[j]).sum();
            quad += self.coef[i] * kc;
            loss += ((y[i] - kc - self.bias).abs() - s.epsilon).max(0.0);
        }
        0.5 * quad + s.c * loss
    }

    /// Dual objective in maximization form:
    /// `-½ coefᵀ K coef - ε Σ(α+α*) + Σ y (α-α*)`.
    pub fn dual_objective(&self, gram: &[Vec<f64>], y: &[f64], s: &SmoSettings) -> f64 {
        let n = y.len();
        let mut quad = 0.0;
        for i in 0..n {
            let kc: f64 = (0..n).map(|j| gram[i][j] * self.coef[j]).sum();
            quad += self.coef[i] * kc;
        }
        let lin: f64 = (0..n)
            .map(|i| y[i] * self.coef[i] - s.epsilon * self.alpha_sum[i])
            .sum();
        -0.5 * quad + lin
    }
}

/// Solves the ε-SVR dual for the given Gram matrix.
///
/// Variables are `β = [α; α*]` with labels `+1`/`-1`; the problem is
/// `min ½ βᵀQβ + pᵀβ` subject to `Σ yβ = 0`, `0 ≤ β ≤ C`.
pub fn solve_smo(gram: &[Vec<f64>], y: &[f64], s: &SmoSettings) -> Result<SvrSolution> {
    let n = y.len();
    if gram.len() != n || gram.iter().any(|r| r.len() != n) {
        return Err(Error::Validation("Gram matrix does not match targets".into()));
    }
    if !(s.c > 0.0 && s.epsilon > 0.0 && s.tolerance > 0.0) {
        return Err(Error::Validation(format!(
            "SVR needs positive C, epsilon and tolerance, got {s:?}"
        )));
    }
    let m = 2 * n;
    let sign = |t: usize| if t < n { 1.0 } else { -1.0 };
    let idx = |t: usize| if t < n { t } else { t - n };
    let q = |a: usize, b: usize| sign(a) * sign(b) * gram[idx(a)][idx(b)];
    let c = s.c;
    let mut beta = vec![0.0; m];
    let mut grad: Vec<f64> = (0..m)
        .map(|t| if t < n { s.epsilon - y[t] } else { s.epsilon + y[t - n] })
        .collect();
    let is_up = |t: usize, b: f64| if sign(t) > 0.0 { b < c } else { b > 0.0 };
    let is_low = |t: usize, b: f64| if sign(t) > 0.0 { b > 0.0 } else { b < c };

    let mut iterations = 0;
    loop {
        let mut g_max = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..m {
            if is_up(t, beta[t]) {
                let v = -sign(t) * grad[t];
                if v >= g_max {
                    g_max = v;
                    i_sel = Some(t);
                }
            }
        }
        let mut g_max2 = f64::NEG_INFINITY;
        let mut j_sel = None;
        let mut obj_min = f64::INFINITY;
        if let Some(i) = i_sel {
            for t in 0..m {
                if !is_low(t, beta[t]) {
                    continue;
                }
                let v = sign(t) * grad[t];
                g_max2 = g_max2.max(v);
                let b = g_max + v;
                if b > 0.0 {
                    let a = q(i, i) + q(t, t) - 2.0 * sign(i) * sign(t) * q(i, t);
                    let a = if a > 0.0 { a } else { TAU };
                    let obj = -(b * b) / a;
                    if obj <= obj_min {
                        obj_min = obj;
                        j_sel = Some(t);
                    }
                }
            }
        }
        let (i, j) = match (i_sel, j_sel) {
            (Some(i), Some(j)) if g_max + g_max2 >= s.tolerance => (i, j),
            _ => break,
        };
        if iterations >= s.max_iterations {
            return Err(Error::Fit(format!(
                "SMO did not reach KKT tolerance {} in {} iterations",
                s.tolerance, s.max_iterations
            )));
        }
        iterations += 1;

        let (old_i, old_j) = (beta[i], beta[j]);
        let (mut ai, mut aj) = (old_i, old_j);
        if sign(i) != sign(j) {
            let quad = (q(i, i) + q(j, j) + 2.0 * q(i, j)).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let quad = (q(i, i) + q(j, j) - 2.0 * q(i, j)).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        beta[i] = ai;
        beta[j] = aj;
        let (di, dj) = (ai - old_i, aj - old_j);
        for t in 0..m {
            grad[t] += q(t, i) * di + q(t, j) * dj;
        }
    }

    // Bias from free variables, falling back to the midpoint of the
    // feasible interval.
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum_free, mut n_free) = (0.0, 0usize);
    for t in 0..m {
        let yg = sign(t) * grad[t];
        if beta[t] >= c {
            if sign(t) < 0.0 {
                ub = ub.min(yg)
            } else {
                lb = lb.max(yg)
            }
        } else if beta[t] <= 0.0 {
            if sign(t) > 0.0 {
                ub = ub.min(yg)
            } else {
                lb = lb.max(yg)
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 {
        sum_free / n_free as f64
    } else {
        0.5 * (ub + lb)
    };
    Ok(SvrSolution {
        coef: (0..n).map(|k| beta[k] - beta[k + n]).collect(),
        bias: -rho,
        iterations,
        alpha_sum: (0..n).map(|k| beta[k] + beta[k + n]).collect(),
    })
}
