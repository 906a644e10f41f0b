//! Experiment configuration, read from and written to JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synth::{BlobsSpec, QuadraticSpec};
use crate::dsc::DscConfig;
use crate::error::{invalid, Error, Result};
use crate::flcore::ModelSpec;
use crate::topology::{BsPlacement, ChannelParams, Fading};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// Channel clustering, then data clustering inside each channel group.
    Dsc,
    /// Data clustering over all clients.
    DataOnly,
    /// Channel clustering only, data-size weights inside groups.
    CommOnly,
    /// Every client sends straight to the base station.
    Fedavg,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::Dsc, Scenario::DataOnly, Scenario::CommOnly, Scenario::Fedavg];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Dsc => "dsc",
            Scenario::DataOnly => "data-only",
            Scenario::CommOnly => "comm-only",
            Scenario::Fedavg => "fedavg",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| invalid(format!("unknown scenario '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Mnist,
    FashionMnist,
    SyntheticBlobs,
    Quadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelMode {
    Ideal,
    #[default]
    Noisy,
}

impl std::str::FromStr for ChannelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ideal" => Ok(ChannelMode::Ideal),
            "noisy" => Ok(ChannelMode::Noisy),
            _ => Err(invalid(format!("unknown channel mode '{s}'"))),
        }
    }
}

/// Label-skew partition settings; the partition seed comes from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PartitionConfig {
    pub clients: usize,
    pub labels_per_client: usize,
    pub samples_min: usize,
    pub samples_max: usize,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self { clients: 20, labels_per_client: 2, samples_min: 200, samples_max: 400 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_scenario")]
    pub scenario: Scenario,
    #[serde(default = "default_dataset")]
    pub dataset: DatasetKind,
    #[serde(default)]
    pub channel: ChannelMode,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch_fraction")]
    pub batch_fraction: f64,
    #[serde(default)]
    pub partition: PartitionConfig,
    #[serde(default = "desk_channel")]
    pub channel_params: ChannelParams,
    #[serde(default)]
    pub bs_placement: BsPlacement,
    #[serde(default)]
    pub fading: Fading,
    #[serde(default)]
    pub dsc: DscConfig,
    /// Defaults to multinomial logistic regression (or least squares for
    /// the quadratic dataset) sized to the data.
    #[serde(default)]
    pub model: Option<ModelSpec>,
    pub master_seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Overrides the dataset root for the IDX datasets.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    #[serde(default)]
    pub blobs: BlobsSpec,
    #[serde(default)]
    pub quadratic: QuadraticSpec,
}

fn default_scenario() -> Scenario {
    Scenario::Dsc
}

fn default_dataset() -> DatasetKind {
    DatasetKind::Mnist
}

fn default_rounds() -> usize {
    100
}

fn default_lr() -> f64 {
    0.1
}

fn default_batch_fraction() -> f64 {
    1.0
}

/// Paper radio constants with the receiver noise floor lowered to -100 dBm,
/// so that a 100 m field yields SNRs of a usable magnitude.
pub fn desk_channel() -> ChannelParams {
    ChannelParams { noise_power_w: 1e-13, ..ChannelParams::default() }
}

impl RunConfig {
    /// Desk-scale defaults with the given seed.
    pub fn desk(master_seed: u64) -> Self {
        Self {
            scenario: default_scenario(),
            dataset: default_dataset(),
            channel: ChannelMode::default(),
            rounds: default_rounds(),
            learning_rate: default_lr(),
            batch_fraction: default_batch_fraction(),
            partition: PartitionConfig::default(),
            channel_params: desk_channel(),
            bs_placement: BsPlacement::default(),
            fading: Fading::default(),
            dsc: DscConfig::default(),
            model: None,
            master_seed,
            output_dir: None,
            data_dir: None,
            blobs: BlobsSpec::default(),
            quadratic: QuadraticSpec::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Number of clients in the run.
    pub fn clients(&self) -> usize {
        match self.dataset {
            DatasetKind::Quadratic => self.quadratic.clients,
            _ => self.partition.clients,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(invalid("rounds must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid(format!("learning rate must be finite and > 0, got {}", self.learning_rate)));
        }
        if !(self.batch_fraction > 0.0 && self.batch_fraction <= 1.0) {
            return Err(invalid(format!("batch fraction must be in (0, 1], got {}", self.batch_fraction)));
        }
        self.channel_params.validate()?;
        self.dsc.validate()?;
        match self.dataset {
            DatasetKind::Quadratic => {
                self.quadratic.validate()?;
                if let Some(m) = self.model {
                    if m.is_classifier() {
                        return Err(invalid("the quadratic dataset needs the quadratic-synthetic model"));
                    }
                }
            }
            _ => {
                if matches!(self.model, Some(ModelSpec::QuadraticSynthetic { .. })) {
                    return Err(invalid("the quadratic-synthetic model needs the quadratic dataset"));
                }
                if self.dataset == DatasetKind::SyntheticBlobs {
                    self.blobs.validate()?;
                }
            }
        }
        if let Some(m) = self.model {
            m.validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_json_gets_desk_defaults() {
        let cfg = RunConfig::from_json(r#"{"master_seed": 7}"#).unwrap();
        assert_eq!(cfg, RunConfig::desk(7));
        let back = RunConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn seed_is_mandatory_and_keys_checked() {
        assert!(RunConfig::from_json("{}").is_err());
        assert!(RunConfig::from_json(r#"{"master_seed": 1, "roundz": 3}"#).is_err());
        assert!(RunConfig::from_json(r#"{"master_seed": 1, "rounds": 0}"#).is_err());
        assert!(RunConfig::from_json(r#"{"master_seed": 1, "learning_rate": -1}"#).is_err());
    }

    #[test]
    fn parses_enums() {
        let cfg = RunConfig::from_json(
            r#"{"master_seed": 1, "scenario": "comm-only", "dataset": "synthetic-blobs", "channel": "ideal",
                "model": {"kind": "mlp1-hidden", "input_dim": 20, "hidden": 8, "classes": 10}}"#,
        )
        .unwrap();
        assert_eq!(cfg.scenario, Scenario::CommOnly);
        assert_eq!(cfg.channel, ChannelMode::Ideal);
        assert_eq!("data-only".parse::<Scenario>().unwrap(), Scenario::DataOnly);
        assert!(RunConfig::from_json(r#"{"master_seed": 1, "dataset": "quadratic",
            "model": {"kind": "multinomial-logistic", "input_dim": 5, "classes": 2}}"#)
        .is_err());
    }
}
