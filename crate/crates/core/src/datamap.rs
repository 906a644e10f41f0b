//! Label-skew partitioning and the information-quantity view of it.

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::affinity::SimilarityMatrix;
use crate::dataset::{Dataset, Shard};
use crate::error::{invalid, Result};
use crate::seed::{self, Stream};

/// Per-label sample counts of one client.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelHistogram {
    counts: Vec<u64>,
    total: u64,
}

impl LabelHistogram {
    pub fn new(counts: Vec<u64>) -> Self {
        let total = counts.iter().sum();
        Self { counts, total }
    }

    pub fn from_labels(labels: impl IntoIterator<Item = usize>, num_labels: usize) -> Self {
        let mut counts = vec![0u64; num_labels];
        for l in labels {
            counts[l] += 1;
        }
        Self::new(counts)
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn num_labels(&self) -> usize {
        self.counts.len()
    }

    /// Labels with at least one sample.
    pub fn support(&self) -> Vec<usize> {
        (0..self.counts.len()).filter(|&l| self.counts[l] > 0).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub clients: usize,
    pub labels_per_client: usize,
    pub samples_min: usize,
    pub samples_max: usize,
    pub seed: u64,
}

impl PartitionSpec {
    pub fn validate(&self, num_labels: usize) -> Result<()> {
        if self.clients == 0 {
            return Err(invalid("partition needs at least one client"));
        }
        if self.labels_per_client == 0 || self.labels_per_client > num_labels {
            return Err(invalid(format!(
                "labels_per_client = {} must be in 1..={num_labels}",
                self.labels_per_client
            )));
        }
        if self.samples_min == 0 || self.samples_min > self.samples_max {
            return Err(invalid(format!(
                "sample range {}..={} is empty or starts at 0",
                self.samples_min, self.samples_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub shards: Vec<Shard>,
    pub histograms: Vec<LabelHistogram>,
    /// Clients that received fewer samples than drawn because a label ran out.
    pub clipped: Vec<usize>,
}

/// Deals each client a random sample count in `[samples_min, samples_max]`,
/// split as evenly as possible over `labels_per_client` distinct random
/// labels. Samples are taken without replacement from the whole dataset; once
/// a label is used up, later requests for it are clipped.
pub fn partition_noniid(dataset: &Dataset, spec: &PartitionSpec) -> Result<Partition> {
    let labels = dataset
        .labels()
        .ok_or_else(|| invalid("label-skew partitioning needs classification data"))?;
    let num_labels = dataset.num_classes();
    spec.validate(num_labels)?;

    let mut rng = seed::rng(spec.seed, Stream::Partition, 0, 0, 0);
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); num_labels];
    for (row, &l) in labels.iter().enumerate() {
        pools[l].push(row);
    }
    for pool in &mut pools {
        pool.shuffle(&mut rng);
    }
    let mut cursor = vec![0usize; num_labels];

    let mut shards = Vec::with_capacity(spec.clients);
    let mut histograms = Vec::with_capacity(spec.clients);
    let mut clipped = Vec::new();
    for client in 0..spec.clients {
        let count = rng.random_range(spec.samples_min..=spec.samples_max);
        let chosen = index::sample(&mut rng, num_labels, spec.labels_per_client).into_vec();
        let base = count / chosen.len();
        let extra = count % chosen.len();
        let mut rows = Vec::with_capacity(count);
        let mut short = false;
        for (slot, &label) in chosen.iter().enumerate() {
            let want = base + usize::from(slot < extra);
            let available = pools[label].len() - cursor[label];
            let take = want.min(available);
            short |= take < want;
            rows.extend_from_slice(&pools[label][cursor[label]..cursor[label] + take]);
            cursor[label] += take;
        }
        if short {
            log::warn!("client {client}: drew {count} samples, only {} available", rows.len());
            clipped.push(client);
        }
        histograms.push(LabelHistogram::from_labels(rows.iter().map(|&r| labels[r]), num_labels));
        shards.push(Shard { rows });
    }
    Ok(Partition { shards, histograms, clipped })
}

/// `K x L` matrix of per-(client, label) information quantities with the
/// totals it was computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoQuantityMatrix {
    clients: usize,
    labels: usize,
    values: Vec<f64>,
    pub total: u64,
    pub client_totals: Vec<u64>,
    pub label_totals: Vec<u64>,
}

impl InfoQuantityMatrix {
    pub fn clients(&self) -> usize {
        self.clients
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn get(&self, k: usize, label: usize) -> f64 {
        self.values[k * self.labels + label]
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.labels..(k + 1) * self.labels]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Entry `(k, l) = -(C_k^l / D) ln(D C_k^l / (D_k C^l))`, zero where `C_k^l = 0`.
pub fn info_matrix(histograms: &[LabelHistogram]) -> Result<InfoQuantityMatrix> {
    let first = histograms.first().ok_or_else(|| invalid("no histograms"))?;
    let labels = first.num_labels();
    if histograms.iter().any(|h| h.num_labels() != labels) {
        return Err(invalid("histograms disagree on the number of labels"));
    }
    let client_totals: Vec<u64> = histograms.iter().map(LabelHistogram::total).collect();
    let total: u64 = client_totals.iter().sum();
    if total == 0 {
        return Err(invalid("all histograms are empty"));
    }
    let label_totals: Vec<u64> = (0..labels).map(|l| histograms.iter().map(|h| h.counts[l]).sum()).collect();
    let d = total as f64;
    let mut values = Vec::with_capacity(histograms.len() * labels);
    for (k, h) in histograms.iter().enumerate() {
        for l in 0..labels {
            let c = h.counts[l];
            values.push(if c == 0 {
                0.0
            } else {
                let c = c as f64;
                -(c / d) * (d * c / (client_totals[k] as f64 * label_totals[l] as f64)).ln()
            });
        }
    }
    Ok(InfoQuantityMatrix {
        clients: histograms.len(),
        labels,
        values,
        total,
        client_totals,
        label_totals,
    })
}

/// Sign applied to the data-similarity entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSimilaritySign {
    /// Positive: more dissimilar label distributions are more "similar", so
    /// groups collect complementary labels.
    #[default]
    AsPrinted,
    Negated,
}

/// Squared row distance of `xi`, squared again.
pub fn row_distance_sq_sq(xi: &InfoQuantityMatrix, i: usize, k: usize) -> f64 {
    let d2: f64 = xi.row(i).iter().zip(xi.row(k)).map(|(a, b)| (a - b) * (a - b)).sum();
    d2 * d2
}

/// Similarity over the listed client rows of `xi`, in the order given.
pub fn data_similarity(
    xi: &InfoQuantityMatrix,
    members: &[usize],
    preference: f64,
    sign: DataSimilaritySign,
) -> Result<SimilarityMatrix> {
    if members.is_empty() {
        return Err(invalid("member set is empty"));
    }
    if let Some(&bad) = members.iter().find(|&&m| m >= xi.clients()) {
        return Err(invalid(format!("member {bad} out of range for {} clients", xi.clients())));
    }
    let s = match sign {
        DataSimilaritySign::AsPrinted => 1.0,
        DataSimilaritySign::Negated => -1.0,
    };
    SimilarityMatrix::from_fn(members.len(), preference, |a, b| {
        s * row_distance_sq_sq(xi, members[a], members[b])
    })
}
