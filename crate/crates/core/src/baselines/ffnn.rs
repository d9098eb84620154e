//! Fully connected ReLU network trained full-batch with Adam on MSE.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gp::Adam;

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    /// `fan_in × fan_out`.
    weights: DMatrix<f64>,
    bias: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
}

fn add_bias_relu(mut z: DMatrix<f64>, bias: &DVector<f64>, relu: bool) -> DMatrix<f64> {
    for (j, mut col) in z.column_iter_mut().enumerate() {
        for v in col.iter_mut() {
            *v += bias[j];
            if relu && *v < 0.0 {
                *v = 0.0;
            }
        }
    }
    z
}

impl Network {
    /// He-uniform weights `U(±√(6/fan_in))`, zero biases.
    pub fn new(sizes: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let limit = (6.0 / w[0] as f64).sqrt();
                Layer {
                    weights: DMatrix::from_fn(w[0], w[1], |_, _| rng.random_range(-limit..limit)),
                    bias: DVector::zeros(w[1]),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    fn unflatten(&mut self, p: &[f64]) {
        let mut k = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&p[k..k + nw]);
            k += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&p[k..k + nb]);
            k += nb;
        }
    }

    /// Activations of every layer for a batch (rows = samples); the last
    /// entry is the linear output.
    fn forward(&self, x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let mut acts = vec![x.clone()];
        for (i, l) in self.layers.iter().enumerate() {
            let relu = i + 1 < self.layers.len();
            let z = acts.last().unwrap() * &l.weights;
            acts.push(add_bias_relu(z, &l.bias, relu));
        }
        acts
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let row = DMatrix::from_row_slice(1, x.len(), x);
        self.forward(&row).last().unwrap()[(0, 0)]
    }

    /// Mean squared error and its gradient in flattened parameter order.
    fn loss_and_gradient(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> (f64, Vec<f64>) {
        let n = y.len() as f64;
        let acts = self.forward(x);
        let out = acts.last().unwrap();
        let resid = DMatrix::from_fn(out.nrows(), 1, |i, _| out[(i, 0)] - y[i]);
        let loss = resid.norm_squared() / n;
        let mut delta = resid * (2.0 / n);
        let mut grads: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::with_capacity(self.layers.len());
        for li in (0..self.layers.len()).rev() {
            let input = &acts[li];
            let gw = input.transpose() * &delta;
            let gb = DVector::from_iterator(delta.ncols(), delta.column_iter().map(|c| c.sum()));
            if li > 0 {
                let mut back = &delta * self.layers[li].weights.transpose();
                back.zip_apply(input, |d, a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = back;
            }
            grads.push((gw, gb));
        }
        grads.reverse();
        let mut flat = Vec::with_capacity(self.param_count());
        for (gw, gb) in grads {
            flat.extend(gw.iter());
            flat.extend(gb.iter());
        }
        (loss, flat)
    }
}

/// Trains for exactly `epochs` full-batch Adam steps.
pub fn train_network(
    x: &DMatrix<f64>,
    y: &[f64],
    hidden: &[usize],
    epochs: usize,
    learn_rate: f64,
    seed: u64,
) -> Result<Network> {
    if y.len() < 2 || x.nrows() != y.len() {
        return Err(Error::Validation(format!(
            "FFNN needs ≥ 2 matching samples, got {}",
            y.len()
        )));
    }
    let mut sizes = vec![x.ncols()];
    sizes.extend_from_slice(hidden);
    sizes.push(1);
    let mut net = Network::new(&sizes, seed);
    let mut params = net.flatten();
    let mut adam = Adam::new(params.len(), learn_rate);
    let yv = DVector::from_column_slice(y);
    for epoch in 0..epochs {
        let (loss, grad) = net.loss_and_gradient(x, &yv);
        if !loss.is_finite() {
            return Err(Error::Fit(format!("non-finite FFNN loss at epoch {epoch}")));
        }
        let descent: Vec<f64> = grad.iter().map(|g| -g).collect();
        adam.step(&mut params, &descent);
        net.unflatten(&params);
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_matches_finite_differences() {
        let x = DMatrix::from_fn(7, 3, |i, j| ((i * 3 + j) as f64 * 0.37).sin());
        let y = DVector::from_fn(7, |i, _| (i as f64 * 0.5).cos());
        let net = Network::new(&[3, 5, 4, 1], 9);
        let (_, grad) = net.loss_and_gradient(&x, &y);
        let p0 = net.flatten();
        let h = 1e-6;
        for k in (0..p0.len()).step_by(3) {
            let mut probe = net.clone();
            let mut p = p0.clone();
            p[k] += h;
            probe.unflatten(&p);
            let up = probe.loss_and_gradient(&x, &y).0;
            p[k] -= 2.0 * h;
            probe.unflatten(&p);
            let down = probe.loss_and_gradient(&x, &y).0;
            let fd = (up - down) / (2.0 * h);
            assert!(
                (fd - grad[k]).abs() < 1e-6 * (1.0 + fd.abs()),
                "param {k}: {fd} vs {}",
                grad[k]
            );
        }
    }

    #[test]
    fn he_uniform_bounds_and_determinism() {
        let a = Network::new(&[5, 64, 64, 1], 3);
        let b = Network::new(&[5, 64, 64, 1], 3);
        assert_eq!(a, b);
        let limit = (6.0f64 / 5.0).sqrt();
        assert!(a.layers[0].weights.iter().all(|w| w.abs() <= limit));
        assert_eq!(a.param_count(), 5 * 64 + 64 + 64 * 64 + 64 + 64 + 1);
    }

    #[test]
    fn learns_a_line() {
        let x = DMatrix::from_fn(40, 1, |i, _| i as f64 / 20.0 - 1.0);
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let net = train_network(&x, &y, &[16, 16], 500, 1e-2, 1).unwrap();
        let mae: f64 = x
            .iter()
            .zip(&y)
            .map(|(v, t)| (net.predict(&[*v]) - t).abs())
            .sum::<f64>()
            / 40.0;
        assert!(mae < 0.04, "{mae}");
    }
}
