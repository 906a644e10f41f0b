//! Datasets, run configuration, the scenario runner and reports.

pub mod config;
pub mod experiment;
pub mod idx;
pub mod report;
pub mod synth;

pub use config::{ChannelMode, DatasetKind, PartitionConfig, RunConfig, Scenario};
pub use experiment::{
    build_groups, load_run, prepare, run_and_save, run_experiment, save_run, train, Grouping, MetricsLog,
    QuadraticSummary, RoundRecord, Setup,
};
pub use report::{emit_report, metrics_csv, parse_metrics_csv, ReportFormat};
