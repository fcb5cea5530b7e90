use serde::{Deserialize, Serialize};

use super::{clamp_prob, sigmoid};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Logistic regression: `p = sigmoid(w . x + bias)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    pub fn predict_proba(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.cols() != self.weights.len() {
            return Err(Error::ShapeMismatch(format!(
                "model expects {} features, got {}",
                self.weights.len(),
                x.cols()
            )));
        }
        Ok(x.row_iter()
            .map(|r| clamp_prob(sigmoid(dot(&self.weights, r) + self.bias)))
            .collect())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean log-loss plus `l2 / 2 * |w|^2` (bias unpenalized).
pub fn linear_objective(x: &Matrix, y: &[bool], l2: f64, w: &[f64], b: f64) -> f64 {
    let n = y.len() as f64;
    let loss: f64 = x
        .row_iter()
        .zip(y)
        .map(|(r, &l)| {
            let z = dot(w, r) + b;
            // log(1 + e^z) - l*z, stable for large |z|
            let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
            softplus - if l { z } else { 0.0 }
        })
        .sum();
    loss / n + 0.5 * l2 * dot(w, w)
}

/// Gradient of [`linear_objective`] with respect to `(w, b)`.
pub fn linear_gradient(x: &Matrix, y: &[bool], l2: f64, w: &[f64], b: f64) -> (Vec<f64>, f64) {
    let n = y.len() as f64;
    let mut gw: Vec<f64> = w.iter().map(|v| l2 * v).collect();
    let mut gb = 0.0;
    for (r, &l) in x.row_iter().zip(y) {
        let e = (sigmoid(dot(w, r) + b) - if l { 1.0 } else { 0.0 }) / n;
        for (g, v) in gw.iter_mut().zip(r) {
            *g += e * v;
        }
        gb += e;
    }
    (gw, gb)
}

/// Full-batch gradient descent on standardized features; the returned
/// weights are mapped back to the original feature scale. The bias starts at
/// the log-odds of the class prior.
pub fn train_linear_baseline(
    x: &Matrix,
    y: &[bool],
    l2: f64,
    epochs: usize,
    lr: f64,
) -> Result<LinearModel> {
    if x.rows() != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} rows, {} labels",
            x.rows(),
            y.len()
        )));
    }
    if !x.all_finite() {
        return Err(Error::NonFinite("training features".into()));
    }
    let n_pos = y.iter().filter(|&&l| l).count();
    if n_pos == 0 || n_pos == y.len() {
        return Err(Error::SingleClass);
    }
    if !(lr > 0.0) || l2 < 0.0 {
        return Err(Error::InvalidConfig("lr must be > 0 and l2 >= 0".into()));
    }

    let (n, d) = (x.rows(), x.cols());
    let mean: Vec<f64> = (0..d).map(|c| x.column(c).iter().sum::<f64>() / n as f64).collect();
    let scale: Vec<f64> = (0..d)
        .map(|c| {
            let var = x.column(c).iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>() / n as f64;
            if var > 0.0 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let mut z = x.clone();
    for r in 0..n {
        for (c, v) in z.row_mut(r).iter_mut().enumerate() {
            *v = (*v - mean[c]) / scale[c];
        }
    }

    let prior = n_pos as f64 / n as f64;
    let mut w = vec![0.0; d];
    let mut b = (prior / (1.0 - prior)).ln();
    for _ in 0..epochs {
        let (gw, gb) = linear_gradient(&z, y, l2, &w, b);
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= lr * g;
        }
        b -= lr * gb;
    }

    let weights: Vec<f64> = w.iter().zip(&scale).map(|(wi, s)| wi / s).collect();
    let bias = b - weights.iter().zip(&mean).map(|(wi, m)| wi * m).sum::<f64>();
    Ok(LinearModel { weights, bias })
}
