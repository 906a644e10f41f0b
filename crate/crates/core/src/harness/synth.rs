//! Seeded synthetic datasets: Gaussian blobs and a per-client least-squares
//! problem with a closed-form optimum.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Shard};
use crate::error::{invalid, Error, Result};
use crate::seed::{self, Stream};

/// Gaussian clusters centred at `separation * e_c` for class `c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlobsSpec {
    pub classes: usize,
    pub dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub separation: f64,
    pub spread: f64,
}

impl Default for BlobsSpec {
    fn default() -> Self {
        Self { classes: 10, dim: 20, train_per_class: 800, test_per_class: 200, separation: 6.0, spread: 1.0 }
    }
}

impl BlobsSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.dim < self.classes {
            return Err(invalid(format!("blobs need >= 2 classes and dim >= classes, got {self:?}")));
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(invalid("blobs need at least one sample per class in each split"));
        }
        if !(self.spread > 0.0 && self.spread.is_finite() && self.separation.is_finite()) {
            return Err(invalid("blob spread must be finite and > 0"));
        }
        Ok(())
    }

    pub fn mean(&self, class: usize) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        m[class] = self.separation;
        m
    }
}

/// Train and test splits, class-interleaved.
pub fn blobs(spec: &BlobsSpec, seed: u64) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let mut rng = seed::rng(seed, Stream::Synthetic, 0, 0, 0);
    let mut split = |per_class: usize| {
        let n = per_class * spec.classes;
        let mut features = Vec::with_capacity(n * spec.dim);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % spec.classes;
            let mean = spec.mean(c);
            features.extend(mean.iter().map(|m| {
                let z: f64 = StandardNormal.sample(&mut rng);
                m + spec.spread * z
            }));
            labels.push(c);
        }
        Dataset::classification(spec.dim, features, labels, spec.classes)
    };
    let train = split(spec.train_per_class)?;
    let test = split(spec.test_per_class)?;
    Ok((train, test))
}

/// Client `k` owns `(B_k, b_k)` with `m_k` rows and local objective
/// `F_k(w) = 0.5 |B_k w - b_k|^2`; the global objective weights clients by `m_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadraticSpec {
    pub clients: usize,
    pub dim: usize,
    pub rows_min: usize,
    pub rows_max: usize,
    /// Spread of the per-client optima around a common centre.
    pub heterogeneity: f64,
    /// Use `B_k = I` (and `m_k = dim`) for every client.
    pub identity: bool,
}

impl Default for QuadraticSpec {
    fn default() -> Self {
        Self { clients: 8, dim: 5, rows_min: 8, rows_max: 16, heterogeneity: 1.0, identity: false }
    }
}

impl QuadraticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 || self.dim == 0 {
            return Err(invalid("quadratic problem needs clients and dim >= 1"));
        }
        if !self.identity && (self.rows_min == 0 || self.rows_min > self.rows_max) {
            return Err(invalid(format!("row range {}..={} is empty", self.rows_min, self.rows_max)));
        }
        if !(self.heterogeneity >= 0.0 && self.heterogeneity.is_finite()) {
            return Err(invalid("heterogeneity must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticProblem {
    /// Rows of client `k` are `sqrt(m_k) B_k` with targets `sqrt(m_k) b_k`,
    /// so the mean per-sample loss over its shard equals `F_k`.
    #[serde(skip)]
    pub dataset: Option<Dataset>,
    #[serde(skip)]
    pub shards: Vec<Shard>,
    pub w_star: Vec<f64>,
    pub f_star: f64,
    pub mu: f64,
    pub lipschitz: f64,
    /// Hessian of the global objective, row-major.
    pub hessian: Vec<f64>,
    /// `sum_k (m_k / m) B_k^T b_k`.
    pub linear: Vec<f64>,
    /// `sum_k (m_k / m) 0.5 |b_k|^2`.
    pub constant: f64,
}

impl QuadraticProblem {
    /// `F(w) = 0.5 w^T H w - c^T w + const`.
    pub fn objective(&self, w: &[f64]) -> f64 {
        let q = w.len();
        let mut quad = 0.0;
        for i in 0..q {
            let hw: f64 = (0..q).map(|j| self.hessian[i * q + j] * w[j]).sum();
            quad += w[i] * hw;
        }
        let lin: f64 = self.linear.iter().zip(w).map(|(c, x)| c * x).sum();
        0.5 * quad - lin + self.constant
    }

    pub fn gap(&self, w: &[f64]) -> f64 {
        self.objective(w) - self.f_star
    }
}

pub fn quadratic(spec: &QuadraticSpec, seed: u64) -> Result<QuadraticProblem> {
    spec.validate()?;
    let q = spec.dim;
    let mut rng = seed::rng(seed, Stream::Synthetic, 1, 0, 0);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let centre: Vec<f64> = (0..q).map(|_| normal()).collect();

    let mut rows_rng = seed::rng(seed, Stream::Synthetic, 2, 0, 0);
    let blocks: Vec<DMatrix<f64>> = (0..spec.clients)
        .map(|_| {
            if spec.identity {
                DMatrix::identity(q, q)
            } else {
                let m = rows_rng.random_range(spec.rows_min..=spec.rows_max);
                DMatrix::from_fn(m, q, |_, _| StandardNormal.sample(&mut rows_rng))
            }
        })
        .collect();
    let mut targets = Vec::with_capacity(spec.clients);
    for b_mat in &blocks {
        let opt: Vec<f64> = centre.iter().map(|c| c + spec.heterogeneity * normal()).collect();
        targets.push(b_mat * DVector::from_vec(opt));
    }

    let total: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut h = DMatrix::<f64>::zeros(q, q);
    let mut c = DVector::<f64>::zeros(q);
    let mut constant = 0.0;
    let mut features = Vec::with_capacity(total * q);
    let mut ys = Vec::with_capacity(total);
    let mut shards = Vec::with_capacity(spec.clients);
    for (b_mat, b) in blocks.iter().zip(&targets) {
        let m = b_mat.nrows();
        let weight = m as f64 / total as f64;
        h += b_mat.transpose() * b_mat * weight;
        c += b_mat.transpose() * b * weight;
        constant += 0.5 * weight * b.norm_squared();
        let scale = (m as f64).sqrt();
        let start = ys.len();
        for r in 0..m {
            features.extend(b_mat.row(r).iter().map(|v| v * scale));
            ys.push(b[r] * scale);
        }
        shards.push(Shard { rows: (start..start + m).collect() });
    }
    let eig = SymmetricEigen::new(h.clone());
    let mu = eig.eigenvalues.min();
    let lipschitz = eig.eigenvalues.max();
    if !(mu > 0.0) {
        return Err(Error::NumericFailure("global objective is not strongly convex".into()));
    }
    let w_star = h
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NumericFailure("Hessian is not positive definite".into()))?
        .solve(&c);
    let mut problem = QuadraticProblem {
        dataset: Some(Dataset::regression(q, features, ys)?),
        shards,
        w_star: w_star.iter().copied().collect(),
        f_star: 0.0,
        mu,
        lipschitz,
        hessian: h.transpose().as_slice().to_vec(),
        linear: c.iter().copied().collect(),
        constant,
    };
    problem.f_star = problem.objective(&problem.w_star);
    Ok(problem)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flcore::ModelSpec;

    #[test]
    fn identity_blocks_have_mean_optimum() {
        let spec = QuadraticSpec { clients: 4, dim: 3, identity: true, ..Default::default() };
        let p = quadratic(&spec, 5).unwrap();
        assert!((p.mu - 1.0).abs() < 1e-12 && (p.lipschitz - 1.0).abs() < 1e-12);
        let data = p.dataset.as_ref().unwrap();
        for i in 0..3 {
            let mean: f64 = p.shards.iter().map(|s| data.target(s.rows[i]) / 3f64.sqrt()).sum::<f64>() / 4.0;
            assert!((p.w_star[i] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn shard_losses_match_objective() {
        let p = quadratic(&QuadraticSpec::default(), 11).unwrap();
        let data = p.dataset.as_ref().unwrap();
        let model = ModelSpec::QuadraticSynthetic { input_dim: 5 };
        let w = vec![0.3, -0.1, 0.2, 0.0, 1.0];
        let all: Vec<usize> = (0..data.len()).collect();
        // The mean over all scaled rows weights each client by m_k / m.
        let direct: f64 = p
            .shards
            .iter()
            .map(|s| s.len() as f64 / data.len() as f64 * model.loss(&w, data, &s.rows))
            .sum();
        assert!((direct - p.objective(&w)).abs() < 1e-10 * direct.abs().max(1.0));
        assert!(model.loss(&w, data, &all).is_finite());
        let mut g = vec![0.0; 5];
        let mut total = vec![0.0; 5];
        for s in &p.shards {
            model.loss_grad(&p.w_star, data, &s.rows, &mut g);
            for (t, v) in total.iter_mut().zip(&g) {
                *t += s.len() as f64 / data.len() as f64 * v;
            }
        }
        assert!(total.iter().all(|v| v.abs() < 1e-9), "{total:?}");
        assert!(p.gap(&w) > 0.0);
    }

    #[test]
    fn blobs_are_deterministic_and_separable() {
        let spec = BlobsSpec { train_per_class: 50, test_per_class: 50, ..Default::default() };
        let (a, t) = blobs(&spec, 3).unwrap();
        assert_eq!(a, blobs(&spec, 3).unwrap().0);
        let means: Vec<Vec<f64>> = (0..spec.classes).map(|c| spec.mean(c)).collect();
        let correct = (0..t.len())
            .filter(|&i| {
                let x = t.row(i);
                let best = (0..spec.classes)
                    .min_by(|&a, &b| {
                        let d = |m: &Vec<f64>| m.iter().zip(x).map(|(u, v)| (u - v).powi(2)).sum::<f64>();
                        d(&means[a]).total_cmp(&d(&means[b]))
                    })
                    .unwrap();
                best == t.label(i)
            })
            .count();
        assert!(correct as f64 / t.len() as f64 >= 0.95);
        assert!(blobs(&BlobsSpec { classes: 0, ..spec }, 1).is_err());
        assert!(blobs(&BlobsSpec { spread: 0.0, ..spec }, 1).is_err());
    }
}
