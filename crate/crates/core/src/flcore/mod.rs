//! Federated rounds: local gradients, transport, hierarchical aggregation and
//! the global step.

mod aggregate;
mod model;
mod transport;

pub use aggregate::{
    aggregate_round, angle_weight, combine, intra_weights, AggregationWeights, GroupTrace, IntraWeighting,
    RoundAggregate, RoundTrace,
};
pub use model::ModelSpec;
pub use transport::{transmit, LinkNoiseModel, LinkUse, NoiseMode, Transmission, BS_NODE};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Shard};
use crate::error::{invalid, Error, Result};
use crate::seed::{self, Stream};

/// Flat model gradient with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientVector {
    pub values: Vec<f64>,
    /// Client (or leader) id that produced it.
    pub source: usize,
    pub round: usize,
    /// Size of the dataset behind it.
    pub sample_count: usize,
}

impl GradientVector {
    pub fn sq_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.sq_norm().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Batch size for a fraction of a shard: `ceil(fraction * n)`, at least 1.
pub fn batch_size(n: usize, batch_fraction: f64) -> usize {
    ((batch_fraction * n as f64).ceil() as usize).clamp(1, n.max(1))
}

/// Mean per-sample gradient over a seeded batch of the client's shard.
/// `batch_fraction == 1` uses every row, in shard order.
#[allow(clippy::too_many_arguments)]
pub fn local_gradient(
    model: &ModelSpec,
    params: &[f64],
    data: &Dataset,
    shard: &Shard,
    batch_fraction: f64,
    client: usize,
    round: usize,
    master_seed: u64,
) -> Result<(GradientVector, f64)> {
    if shard.is_empty() {
        return Err(invalid(format!("client {client} has an empty dataset")));
    }
    if !(batch_fraction > 0.0 && batch_fraction <= 1.0) {
        return Err(invalid(format!("batch fraction must be in (0, 1], got {batch_fraction}")));
    }
    if params.len() != model.param_count() {
        return Err(invalid("parameter vector does not match the model"));
    }
    let n = shard.len();
    let m = batch_size(n, batch_fraction);
    let mut grad = vec![0.0; params.len()];
    let loss = if m == n {
        model.loss_grad(params, data, &shard.rows, &mut grad)
    } else {
        let mut rng = seed::rng(master_seed, Stream::Batch, client as u64, round as u64, 0);
        let mut picked: Vec<usize> = index::sample(&mut rng, n, m).into_iter().map(|i| shard.rows[i]).collect();
        picked.sort_unstable();
        model.loss_grad(params, data, &picked, &mut grad)
    };
    Ok((GradientVector { values: grad, source: client, round, sample_count: n }, loss))
}

/// `w <- w - lr * grad`. A non-finite gradient aborts without touching `w`.
pub fn global_update(params: &mut [f64], grad: &GradientVector, learning_rate: f64) -> Result<()> {
    if !(learning_rate > 0.0 && learning_rate.is_finite()) {
        return Err(invalid(format!("learning rate must be finite and > 0, got {learning_rate}")));
    }
    if grad.values.len() != params.len() {
        return Err(invalid("gradient length does not match the model"));
    }
    if !grad.is_finite() {
        return Err(Error::NumericFailure(format!("non-finite global gradient in round {}", grad.round)));
    }
    for (w, g) in params.iter_mut().zip(&grad.values) {
        *w -= learning_rate * g;
    }
    Ok(())
}
