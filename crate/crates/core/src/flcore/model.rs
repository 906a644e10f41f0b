//! Trainable models with hand-written gradients.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{invalid, Result};
use crate::seed::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelSpec {
    /// Softmax regression: weights `[classes x input_dim]` then biases `[classes]`.
    MultinomialLogistic { input_dim: usize, classes: usize },
    /// `input -> tanh(hidden) -> softmax(classes)`. Layout: W1, b1, W2, b2.
    Mlp1Hidden { input_dim: usize, hidden: usize, classes: usize },
    /// Least squares with per-sample loss `0.5 * (a.w - y)^2`.
    QuadraticSynthetic { input_dim: usize },
}

impl ModelSpec {
    pub fn param_count(&self) -> usize {
        match *self {
            ModelSpec::MultinomialLogistic { input_dim, classes } => classes * (input_dim + 1),
            ModelSpec::Mlp1Hidden { input_dim, hidden, classes } => hidden * (input_dim + 1) + classes * (hidden + 1),
            ModelSpec::QuadraticSynthetic { input_dim } => input_dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        match *self {
            ModelSpec::MultinomialLogistic { input_dim, .. }
            | ModelSpec::Mlp1Hidden { input_dim, .. }
            | ModelSpec::QuadraticSynthetic { input_dim } => input_dim,
        }
    }

    pub fn is_classifier(&self) -> bool {
        !matches!(self, ModelSpec::QuadraticSynthetic { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ModelSpec::MultinomialLogistic { input_dim, classes } => input_dim > 0 && classes >= 2,
            ModelSpec::Mlp1Hidden { input_dim, hidden, classes } => input_dim > 0 && hidden > 0 && classes >= 2,
            ModelSpec::QuadraticSynthetic { input_dim } => input_dim > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("degenerate model dimensions: {self:?}")))
        }
    }

    /// Checks that `data` has the shape this model expects.
    pub fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.dim() != self.input_dim() {
            return Err(invalid(format!("model expects dim {}, data has {}", self.input_dim(), data.dim())));
        }
        match *self {
            ModelSpec::MultinomialLogistic { classes, .. } | ModelSpec::Mlp1Hidden { classes, .. } => {
                if data.num_classes() != classes {
                    return Err(invalid(format!("model has {classes} classes, data has {}", data.num_classes())));
                }
            }
            ModelSpec::QuadraticSynthetic { .. } => {}
        }
        Ok(())
    }

    /// Initial parameters: zeros for the convex models, scaled Gaussian
    /// weights (zero biases) for the MLP.
    pub fn init(&self, master_seed: u64) -> Vec<f64> {
        let mut params = vec![0.0; self.param_count()];
        if let ModelSpec::Mlp1Hidden { input_dim, hidden, classes } = *self {
            let mut rng = seed::rng(master_seed, Stream::ModelInit, 0, 0, 0);
            let l1 = Normal::new(0.0, (1.0 / input_dim as f64).sqrt()).expect("positive std");
            let l2 = Normal::new(0.0, (1.0 / hidden as f64).sqrt()).expect("positive std");
            let w2_start = hidden * (input_dim + 1);
            for p in &mut params[..hidden * input_dim] {
                *p = l1.sample(&mut rng);
            }
            for p in &mut params[w2_start..w2_start + classes * hidden] {
                *p = l2.sample(&mut rng);
            }
        }
        params
    }

    /// Mean loss over `rows` and its gradient, written into `grad`.
    pub fn loss_grad(&self, params: &[f64], data: &Dataset, rows: &[usize], grad: &mut [f64]) -> f64 {
        debug_assert_eq!(params.len(), self.param_count());
        debug_assert_eq!(grad.len(), params.len());
        grad.iter_mut().for_each(|g| *g = 0.0);
        if rows.is_empty() {
            return 0.0;
        }
        let mut loss = 0.0;
        match *self {
            ModelSpec::MultinomialLogistic { input_dim, classes } => {
                let mut probs = vec![0.0; classes];
                let mut nz = Vec::with_capacity(input_dim);
                let (w, b) = params.split_at(classes * input_dim);
                let (gw, gb) = grad.split_at_mut(classes * input_dim);
                for &r in rows {
                    let x = data.row(r);
                    sparse_affine(w, b, x, &mut nz, &mut probs);
                    loss += softmax_xent(&mut probs, data.label(r));
                    for c in 0..classes {
                        let d = probs[c];
                        gb[c] += d;
                        let gwc = &mut gw[c * input_dim..(c + 1) * input_dim];
                        for &j in &nz {
                            gwc[j] += d * x[j];
                        }
                    }
                }
            }
            ModelSpec::Mlp1Hidden { input_dim, hidden, classes } => {
                let (w1, rest) = params.split_at(hidden * input_dim);
                let (b1, rest) = rest.split_at(hidden);
                let (w2, b2) = rest.split_at(classes * hidden);
                let (gw1, grest) = grad.split_at_mut(hidden * input_dim);
                let (gb1, grest) = grest.split_at_mut(hidden);
                let (gw2, gb2) = grest.split_at_mut(classes * hidden);
                let mut h = vec![0.0; hidden];
                let mut probs = vec![0.0; classes];
                let mut dh = vec![0.0; hidden];
                for &r in rows {
                    let x = data.row(r);
                    affine(w1, b1, x, &mut h);
                    h.iter_mut().for_each(|v| *v = v.tanh());
                    affine(w2, b2, &h, &mut probs);
                    loss += softmax_xent(&mut probs, data.label(r));
                    dh.iter_mut().for_each(|v| *v = 0.0);
                    for c in 0..classes {
                        let d = probs[c];
                        gb2[c] += d;
                        axpy(d, &h, &mut gw2[c * hidden..(c + 1) * hidden]);
                        axpy(d, &w2[c * hidden..(c + 1) * hidden], &mut dh);
                    }
                    for j in 0..hidden {
                        let dz = dh[j] * (1.0 - h[j] * h[j]);
                        gb1[j] += dz;
                        if dz != 0.0 {
                            axpy(dz, x, &mut gw1[j * input_dim..(j + 1) * input_dim]);
                        }
                    }
                }
            }
            ModelSpec::QuadraticSynthetic { .. } => {
                for &r in rows {
                    let x = data.row(r);
                    let resid = dot(params, x) - data.target(r);
                    loss += 0.5 * resid * resid;
                    axpy(resid, x, grad);
                }
            }
        }
        let inv = 1.0 / rows.len() as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        loss * inv
    }

    /// Mean loss over `rows` (forward pass only).
    pub fn loss(&self, params: &[f64], data: &Dataset, rows: &[usize]) -> f64 {
        if rows.is_empty() {
            return 0.0;
        }
        let total: f64 = match *self {
            ModelSpec::QuadraticSynthetic { .. } => rows
                .iter()
                .map(|&r| {
                    let resid = dot(params, data.row(r)) - data.target(r);
                    0.5 * resid * resid
                })
                .sum(),
            _ => {
                let mut z = Vec::new();
                rows.iter()
                    .map(|&r| {
                        self.logits(params, data.row(r), &mut z);
                        softmax_xent(&mut z, data.label(r))
                    })
                    .sum()
            }
        };
        total / rows.len() as f64
    }

    /// Class scores of a classifier, written into `z`.
    fn logits(&self, params: &[f64], x: &[f64], z: &mut Vec<f64>) {
        match *self {
            ModelSpec::MultinomialLogistic { input_dim, classes } => {
                z.resize(classes, 0.0);
                let (w, b) = params.split_at(classes * input_dim);
                sparse_affine(w, b, x, &mut Vec::with_capacity(input_dim), z);
            }
            ModelSpec::Mlp1Hidden { input_dim, hidden, classes } => {
                let (w1, rest) = params.split_at(hidden * input_dim);
                let (b1, rest) = rest.split_at(hidden);
                let (w2, b2) = rest.split_at(classes * hidden);
                let mut h = vec![0.0; hidden];
                affine(w1, b1, x, &mut h);
                h.iter_mut().for_each(|v| *v = v.tanh());
                z.resize(classes, 0.0);
                affine(w2, b2, &h, z);
            }
            ModelSpec::QuadraticSynthetic { .. } => unreachable!("regression model has no logits"),
        }
    }

    /// Most probable class (classifiers) or `round(a.w)` clamped at 0
    /// (regression, rarely useful).
    pub fn predict(&self, params: &[f64], x: &[f64]) -> usize {
        match *self {
            ModelSpec::QuadraticSynthetic { .. } => dot(params, x).round().max(0.0) as usize,
            _ => {
                let mut z = Vec::new();
                self.logits(params, x, &mut z);
                argmax(&z)
            }
        }
    }

    /// Fraction of rows classified correctly. `None` for regression models.
    pub fn accuracy(&self, params: &[f64], data: &Dataset) -> Option<f64> {
        if !self.is_classifier() || data.is_empty() {
            return None;
        }
        let correct = (0..data.len()).filter(|&i| self.predict(params, data.row(i)) == data.label(i)).count();
        Some(correct as f64 / data.len() as f64)
    }
}

/// Four independent partial sums so the loop vectorises.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a4, a_rest) = a[..n].split_at(n - n % 4);
    let (b4, b_rest) = b[..n].split_at(n - n % 4);
    let mut acc = [0.0; 4];
    for (x, y) in a4.chunks_exact(4).zip(b4.chunks_exact(4)) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    let tail: f64 = a_rest.iter().zip(b_rest).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out = W x + b` with `W` row-major `[out.len() x x.len()]`.
fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let d = x.len();
    for (c, o) in out.iter_mut().enumerate() {
        *o = b[c] + dot(&w[c * d..(c + 1) * d], x);
    }
}

/// `affine` that skips zero inputs; the nonzero positions of `x` are left in `nz`.
fn sparse_affine(w: &[f64], b: &[f64], x: &[f64], nz: &mut Vec<usize>, out: &mut [f64]) {
    let d = x.len();
    nz.clear();
    nz.extend(x.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, _)| j));
    for (c, o) in out.iter_mut().enumerate() {
        let wc = &w[c * d..(c + 1) * d];
        *o = b[c] + nz.iter().map(|&j| wc[j] * x[j]).sum::<f64>();
    }
}

/// Turns logits into `softmax - onehot(label)` in place; returns the
/// cross-entropy of `label`.
fn softmax_xent(z: &mut [f64], label: usize) -> f64 {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let shifted_label = z[label] - max;
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let loss = sum.ln() - shifted_label;
    for v in z.iter_mut() {
        *v /= sum;
    }
    z[label] -= 1.0;
    loss
}

fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in z.iter().enumerate() {
        if *v > z[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_counts() {
        assert_eq!(ModelSpec::MultinomialLogistic { input_dim: 784, classes: 10 }.param_count(), 7850);
        assert_eq!(ModelSpec::Mlp1Hidden { input_dim: 4, hidden: 3, classes: 2 }.param_count(), 15 + 8);
        assert_eq!(ModelSpec::QuadraticSynthetic { input_dim: 5 }.param_count(), 5);
    }

    #[test]
    fn quadratic_gradient_closed_form() {
        // Rows of B and entries of b.
        let b_rows = [[1.0, 2.0], [0.5, -1.0], [3.0, 0.0]];
        let targets = [1.0, -2.0, 0.5];
        let data = Dataset::regression(2, b_rows.concat(), targets.to_vec()).unwrap();
        let w = [0.3, -0.7];
        let model = ModelSpec::QuadraticSynthetic { input_dim: 2 };
        let mut g = [0.0; 2];
        model.loss_grad(&w, &data, &[0, 1, 2], &mut g);
        // (1/n) B^T (B w - b)
        let mut expected = [0.0; 2];
        for (row, t) in b_rows.iter().zip(targets) {
            let r = row[0] * w[0] + row[1] * w[1] - t;
            expected[0] += row[0] * r / 3.0;
            expected[1] += row[1] * r / 3.0;
        }
        for i in 0..2 {
            assert!((g[i] - expected[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_model_balanced_bias_gradient_vanishes() {
        let data = Dataset::classification(2, vec![1.0, 2.0, -1.0, 0.5], vec![0, 1], 2).unwrap();
        let model = ModelSpec::MultinomialLogistic { input_dim: 2, classes: 2 };
        let mut g = vec![0.0; model.param_count()];
        model.loss_grad(&model.init(0), &data, &[0, 1], &mut g);
        assert_eq!(&g[4..], &[0.0, 0.0]);
    }

    #[test]
    fn shape_checks() {
        let data = Dataset::classification(2, vec![0.0; 4], vec![0, 1], 2).unwrap();
        assert!(ModelSpec::MultinomialLogistic { input_dim: 3, classes: 2 }.check_data(&data).is_err());
        assert!(ModelSpec::MultinomialLogistic { input_dim: 2, classes: 3 }.check_data(&data).is_err());
        assert!(ModelSpec::Mlp1Hidden { input_dim: 2, hidden: 0, classes: 2 }.validate().is_err());
    }
}
