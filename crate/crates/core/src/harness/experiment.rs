//! Scenario runner: partition, cluster, train, persist.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ChannelMode, DatasetKind, RunConfig, Scenario};
use super::idx::{self, IdxSplit};
use super::report;
use super::synth::{self, QuadraticProblem};
use crate::datamap::{info_matrix, partition_noniid, InfoQuantityMatrix, LabelHistogram, PartitionSpec};
use crate::dataset::{ClientData, Dataset};
use crate::dsc::{cluster_primary, run_data_only, run_dsc, GroupStructure, Stage};
use crate::error::{Error, Result};
use crate::flcore::{
    aggregate_round, global_update, local_gradient, IntraWeighting, LinkNoiseModel, ModelSpec, RoundTrace,
};
use crate::theory::{estimate_factors, FactorEstimate};
use crate::topology::{build_snr_matrix_with_fading, place_clients_with, Deployment, SnrMatrix};

/// Everything a run needs before clustering. Identical for every scenario
/// under the same configuration and seed.
#[derive(Debug, Clone)]
pub struct Setup {
    pub model: ModelSpec,
    pub clients: ClientData,
    pub test: Option<Arc<Dataset>>,
    pub histograms: Vec<LabelHistogram>,
    pub xi: InfoQuantityMatrix,
    pub deployment: Deployment,
    pub snr: SnrMatrix,
    pub quadratic: Option<QuadraticProblem>,
}

/// Labelled training source plus test set. IDX data stays as raw bytes
/// until the partition has picked the rows that clients actually hold.
enum Source {
    Idx(IdxSplit, IdxSplit),
    Memory(Dataset, Dataset),
}

impl Source {
    fn load(cfg: &RunConfig) -> Result<Self> {
        let root = cfg.data_dir.clone().unwrap_or_else(idx::data_root);
        let (train, test) = match cfg.dataset {
            DatasetKind::Mnist => idx::load_split_dir(&idx::locate(&root, &["mnist", "mnist-desk"])?)?,
            DatasetKind::FashionMnist => idx::load_split_dir(&idx::locate(&root, &["fashion-mnist"])?)?,
            DatasetKind::SyntheticBlobs => {
                let (train, test) = synth::blobs(&cfg.blobs, cfg.master_seed)?;
                return Ok(Source::Memory(train, test));
            }
            DatasetKind::Quadratic => unreachable!("quadratic data is generated per client"),
        };
        Ok(Source::Idx(train, test))
    }

    fn labels(&self) -> Result<Dataset> {
        match self {
            Source::Idx(train, _) => train.label_view(),
            Source::Memory(train, _) => Ok(train.clone()),
        }
    }

    /// Materialises the given training rows (sorted, distinct) and the test set.
    fn materialise(self, rows: &[usize]) -> Result<(Dataset, Dataset)> {
        match self {
            Source::Idx(train, test) => Ok((train.to_dataset(rows)?, test.to_full_dataset()?)),
            Source::Memory(train, test) => Ok((train.subset(rows), test)),
        }
    }
}

pub fn prepare(cfg: &RunConfig) -> Result<Setup> {
    cfg.validate()?;
    let k = cfg.clients();
    let (model, clients, test, histograms, quadratic) = if cfg.dataset == DatasetKind::Quadratic {
        let mut problem = synth::quadratic(&cfg.quadratic, cfg.master_seed)?;
        let data = problem.dataset.take().expect("generated dataset");
        let shards = std::mem::take(&mut problem.shards);
        let histograms = shards.iter().map(|s| LabelHistogram::new(vec![s.len() as u64])).collect();
        let model = cfg.model.unwrap_or(ModelSpec::QuadraticSynthetic { input_dim: data.dim() });
        (model, ClientData { data: Arc::new(data), shards }, None, histograms, Some(problem))
    } else {
        let source = Source::load(cfg)?;
        let labels = source.labels()?;
        let spec = PartitionSpec {
            clients: k,
            labels_per_client: cfg.partition.labels_per_client,
            samples_min: cfg.partition.samples_min,
            samples_max: cfg.partition.samples_max,
            seed: cfg.master_seed,
        };
        let mut part = partition_noniid(&labels, &spec)?;
        if let Some(empty) = part.shards.iter().position(|s| s.is_empty()) {
            return Err(Error::InvalidArgument(format!(
                "client {empty} received no samples; the dataset is too small for this partition"
            )));
        }
        // Keep only rows some client holds and renumber the shards.
        let mut used: Vec<usize> = part.shards.iter().flat_map(|s| s.rows.iter().copied()).collect();
        used.sort_unstable();
        let mut new_index = vec![usize::MAX; labels.len()];
        for (i, &r) in used.iter().enumerate() {
            new_index[r] = i;
        }
        for shard in &mut part.shards {
            shard.rows.iter_mut().for_each(|r| *r = new_index[*r]);
        }
        let (train, test) = source.materialise(&used)?;
        let model = cfg
            .model
            .unwrap_or(ModelSpec::MultinomialLogistic { input_dim: train.dim(), classes: train.num_classes() });
        let clients = ClientData { data: Arc::new(train), shards: part.shards };
        (model, clients, Some(Arc::new(test)), part.histograms, None)
    };
    model.validate()?;
    model.check_data(&clients.data)?;
    if let Some(t) = &test {
        model.check_data(t)?;
    }
    let xi = info_matrix(&histograms)?;
    let deployment = place_clients_with(k, &cfg.channel_params, cfg.master_seed, cfg.bs_placement)?;
    let snr = build_snr_matrix_with_fading(&deployment.clients, deployment.bs, &cfg.channel_params, cfg.fading)?;
    Ok(Setup { model, clients, test, histograms, xi, deployment, snr, quadratic })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grouping {
    pub scenario: Scenario,
    /// Channel groups, for the scenarios that compute them.
    pub primary: Option<GroupStructure>,
    pub groups: GroupStructure,
    pub intra: IntraWeighting,
}

pub fn build_groups(setup: &Setup, scenario: Scenario, cfg: &RunConfig) -> Result<Grouping> {
    let (primary, groups, intra) = match scenario {
        Scenario::Dsc => {
            let out = run_dsc(&setup.snr, &setup.xi, &setup.deployment.clients, &cfg.dsc)?;
            (Some(out.primary), out.groups, IntraWeighting::AngleAware)
        }
        Scenario::DataOnly => (None, run_data_only(&setup.snr, &setup.xi, &cfg.dsc)?, IntraWeighting::AngleAware),
        Scenario::CommOnly => {
            let primary = cluster_primary(&setup.snr, &cfg.dsc)?;
            let mut groups = primary.clone();
            groups.stage = Stage::Final;
            (Some(primary), groups, IntraWeighting::DataSize)
        }
        Scenario::Fedavg => {
            (None, GroupStructure::singletons(setup.snr.len(), Stage::Final), IntraWeighting::DataSize)
        }
    };
    groups.validate_complete()?;
    if !groups.converged {
        warn!("{}: affinity propagation hit its iteration cap", scenario.name());
    }
    Ok(Grouping { scenario, primary, groups, intra })
}

/// One completed round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Sample-weighted training loss after the round's update.
    pub train_loss: f64,
    pub test_accuracy: Option<f64>,
    /// Norm of the gradient received at the base station.
    pub grad_norm: f64,
    pub num_groups: usize,
    pub mean_group_size: f64,
    pub mean_label_coverage: f64,
    /// Seconds since training started; excluded from determinism checks.
    pub wall_clock_s: f64,
}

/// Closed-form facts of a quadratic run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticSummary {
    pub mu: f64,
    pub lipschitz: f64,
    pub f_star: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub scenario: Scenario,
    pub records: Vec<RoundRecord>,
    /// Training loss of the initial model.
    pub initial_loss: f64,
    pub learning_rate: f64,
    pub grouping: Grouping,
    pub traces: Vec<RoundTrace>,
    pub factors: Option<FactorEstimate>,
    pub quadratic: Option<QuadraticSummary>,
    /// Set when the run stopped early; `records` ends at the last good round.
    pub failure: Option<String>,
}

impl MetricsLog {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.test_accuracy)
    }
}

fn train_loss(setup: &Setup, params: &[f64]) -> f64 {
    let data = &setup.clients.data;
    let total: usize = setup.clients.shards.iter().map(|s| s.len()).sum();
    setup
        .clients
        .shards
        .par_iter()
        .map(|s| s.len() as f64 / total as f64 * setup.model.loss(params, data, &s.rows))
        .collect::<Vec<_>>()
        .into_iter()
        .sum()
}

/// Trains over an already-built grouping.
pub fn train(setup: &Setup, grouping: Grouping, cfg: &RunConfig) -> Result<MetricsLog> {
    let noise = match cfg.channel {
        ChannelMode::Ideal => LinkNoiseModel::ideal(),
        ChannelMode::Noisy => LinkNoiseModel::awgn(cfg.master_seed),
    };
    let groups = &grouping.groups;
    let num_groups = groups.groups.len();
    let mean_group_size = groups.num_clients as f64 / num_groups as f64;
    let coverage = groups.mean_label_coverage(&setup.histograms);
    let data = &setup.clients.data;
    let mut params = setup.model.init(cfg.master_seed);
    let initial_loss = train_loss(setup, &params);
    let mut records = Vec::with_capacity(cfg.rounds);
    let mut traces = Vec::with_capacity(cfg.rounds);
    let mut failure = None;
    let start = Instant::now();

    for t in 0..cfg.rounds {
        let grads = setup
            .clients
            .shards
            .par_iter()
            .enumerate()
            .map(|(k, shard)| {
                local_gradient(&setup.model, &params, data, shard, cfg.batch_fraction, k, t, cfg.master_seed)
                    .map(|(g, _)| g)
            })
            .collect::<Result<Vec<_>>>()?;
        let step = aggregate_round(groups, &grads, grouping.intra, &noise, &setup.snr, t)
            .and_then(|agg| global_update(&mut params, &agg.global, cfg.learning_rate).map(|()| agg));
        let agg = match step {
            Ok(agg) => agg,
            Err(e @ Error::NumericFailure(_)) => {
                failure = Some(format!("round {}: {e}", t + 1));
                break;
            }
            Err(e) => return Err(e),
        };
        let loss = train_loss(setup, &params);
        if !loss.is_finite() {
            failure = Some(format!("round {}: training loss is not finite", t + 1));
            break;
        }
        let test_accuracy = match &setup.test {
            Some(test) => setup.model.accuracy(&params, test),
            None => None,
        };
        records.push(RoundRecord {
            round: t + 1,
            train_loss: loss,
            test_accuracy,
            grad_norm: agg.global.norm(),
            num_groups,
            mean_group_size,
            mean_label_coverage: coverage,
            wall_clock_s: start.elapsed().as_secs_f64(),
        });
        traces.push(agg.trace);
    }
    if let Some(f) = &failure {
        warn!("{}: stopped early, {f}", grouping.scenario.name());
    }
    let factors = if traces.is_empty() { None } else { Some(estimate_factors(&traces)?) };
    let quadratic = setup
        .quadratic
        .as_ref()
        .map(|q| QuadraticSummary { mu: q.mu, lipschitz: q.lipschitz, f_star: q.f_star });
    Ok(MetricsLog {
        scenario: grouping.scenario,
        records,
        initial_loss,
        learning_rate: cfg.learning_rate,
        grouping,
        traces,
        factors,
        quadratic,
        failure,
    })
}

/// Runs the configured scenario without touching the filesystem.
pub fn run_experiment(cfg: &RunConfig) -> Result<MetricsLog> {
    let setup = prepare(cfg)?;
    let grouping = build_groups(&setup, cfg.scenario, cfg)?;
    info!(
        "{}: {} clients in {} groups",
        cfg.scenario.name(),
        grouping.groups.num_clients,
        grouping.groups.groups.len()
    );
    train(&setup, grouping, cfg)
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const GROUPS_FILE: &str = "groups.json";
pub const TRACE_FILE: &str = "trace.json";
pub const CONFIG_FILE: &str = "config.json";

/// Writes via a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Serialize, Deserialize)]
struct TraceFile {
    scenario: Scenario,
    initial_loss: f64,
    learning_rate: f64,
    intra: IntraWeighting,
    factors: Option<FactorEstimate>,
    quadratic: Option<QuadraticSummary>,
    failure: Option<String>,
    traces: Vec<RoundTrace>,
}

#[derive(Serialize, Deserialize)]
struct GroupsFile {
    primary: Option<GroupStructure>,
    groups: GroupStructure,
}

/// Persists a log into `dir` (created if needed).
pub fn save_run(log: &MetricsLog, cfg: &RunConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_atomic(&dir.join(METRICS_FILE), report::metrics_csv(&log.records).as_bytes())?;
    let groups = GroupsFile { primary: log.grouping.primary.clone(), groups: log.grouping.groups.clone() };
    write_atomic(&dir.join(GROUPS_FILE), serde_json::to_string_pretty(&groups)?.as_bytes())?;
    let trace = TraceFile {
        scenario: log.scenario,
        initial_loss: log.initial_loss,
        learning_rate: log.learning_rate,
        intra: log.grouping.intra,
        factors: log.factors.clone(),
        quadratic: log.quadratic,
        failure: log.failure.clone(),
        traces: log.traces.clone(),
    };
    write_atomic(&dir.join(TRACE_FILE), serde_json::to_string(&trace)?.as_bytes())?;
    write_atomic(&dir.join(CONFIG_FILE), cfg.to_json()?.as_bytes())
}

/// Reads back a directory written by [`save_run`].
pub fn load_run(dir: &Path) -> Result<MetricsLog> {
    let read = |name: &str| {
        let p = dir.join(name);
        std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
    };
    let records = report::parse_metrics_csv(&read(METRICS_FILE)?)?;
    let groups: GroupsFile = serde_json::from_str(&read(GROUPS_FILE)?)?;
    let trace: TraceFile = serde_json::from_str(&read(TRACE_FILE)?)?;
    Ok(MetricsLog {
        scenario: trace.scenario,
        records,
        initial_loss: trace.initial_loss,
        learning_rate: trace.learning_rate,
        grouping: Grouping {
            scenario: trace.scenario,
            primary: groups.primary,
            groups: groups.groups,
            intra: trace.intra,
        },
        traces: trace.traces,
        factors: trace.factors,
        quadratic: trace.quadratic,
        failure: trace.failure,
    })
}

/// Runs and, when `cfg.output_dir` is set, persists.
pub fn run_and_save(cfg: &RunConfig) -> Result<MetricsLog> {
    let log = run_experiment(cfg)?;
    if let Some(dir) = &cfg.output_dir {
        save_run(&log, cfg, dir)?;
    }
    Ok(log)
}
