//! In-memory sample store shared by every client of a run.
//!
//! Clients never own copies of samples; a [`Shard`] is a list of row indices
//! into one [`Dataset`].

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes { labels: Vec<usize>, num_classes: usize },
    Real(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    features: Vec<f64>,
    targets: Targets,
}

impl Dataset {
    pub fn classification(dim: usize, features: Vec<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return Err(invalid("classification data needs at least one class"));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(invalid(format!("label {bad} out of range for {num_classes} classes")));
        }
        Self::build(dim, features, labels.len(), Targets::Classes { labels, num_classes })
    }

    pub fn regression(dim: usize, features: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        Self::build(dim, features, targets.len(), Targets::Real(targets))
    }

    fn build(dim: usize, features: Vec<f64>, n: usize, targets: Targets) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("feature dimension must be >= 1"));
        }
        if features.len() != n * dim {
            return Err(invalid(format!(
                "{} feature values do not make {n} rows of dimension {dim}",
                features.len()
            )));
        }
        Ok(Self { dim, features, targets })
    }

    pub fn len(&self) -> usize {
        self.features.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Number of classes; 0 for regression data.
    pub fn num_classes(&self) -> usize {
        match &self.targets {
            Targets::Classes { num_classes, .. } => *num_classes,
            Targets::Real(_) => 0,
        }
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Classes { labels, .. } => Some(labels),
            Targets::Real(_) => None,
        }
    }

    pub fn label(&self, i: usize) -> usize {
        match &self.targets {
            Targets::Classes { labels, .. } => labels[i],
            Targets::Real(_) => panic!("regression data has no labels"),
        }
    }

    pub fn target(&self, i: usize) -> f64 {
        match &self.targets {
            Targets::Real(t) => t[i],
            Targets::Classes { labels, .. } => labels[i] as f64,
        }
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    /// Copies the given rows into a new dataset.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            features.extend_from_slice(self.row(r));
        }
        let targets = match &self.targets {
            Targets::Classes { labels, num_classes } => Targets::Classes {
                labels: rows.iter().map(|&r| labels[r]).collect(),
                num_classes: *num_classes,
            },
            Targets::Real(t) => Targets::Real(rows.iter().map(|&r| t[r]).collect()),
        };
        Dataset { dim: self.dim, features, targets }
    }
}

/// A client's view of the shared dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shard {
    pub rows: Vec<usize>,
}

impl Shard {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Shared dataset plus one shard per client.
#[derive(Debug, Clone)]
pub struct ClientData {
    pub data: Arc<Dataset>,
    pub shards: Vec<Shard>,
}

impl ClientData {
    pub fn sample_counts(&self) -> Vec<usize> {
        self.shards.iter().map(Shard::len).collect()
    }
}
