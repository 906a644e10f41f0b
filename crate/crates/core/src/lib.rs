//! Hierarchical wireless federated learning with dual-segment clustering.
//!
//! Clients are first grouped by channel quality (affinity propagation over the
//! SNR matrix), then each of those groups is split by label-distribution
//! information quantity. Training runs gradient rounds through the resulting
//! two-tier hierarchy over noisy links, and [`theory`] evaluates the matching
//! convergence bound.
//!
//! Module map:
//!
//! * [`topology`]: client field, path loss, SNR matrix.
//! * [`affinity`]: the affinity-propagation engine.
//! * [`datamap`]: Non-IID partitioning, information-quantity matrix, data similarity.
//! * [`dsc`]: the two-stage clustering pipeline and straggler assignment.
//! * [`flcore`]: models, noisy transport, hierarchical aggregation.
//! * [`theory`]: contraction factor, bound trajectory, factor estimation.
//! * [`harness`]: datasets, run configuration, experiment runner, reports.

pub mod affinity;
pub mod datamap;
pub mod dataset;
pub mod dsc;
pub mod error;
pub mod flcore;
pub mod harness;
pub mod seed;
pub mod theory;
pub mod topology;

pub use error::{Error, Result};
