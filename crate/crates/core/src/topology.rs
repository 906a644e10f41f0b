//! Client field, path-loss model and the SNR matrix.
//!
//! All SNRs are linear. Conversion to dB happens only when values are shown
//! to a human ([`to_db`]).

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::seed::{self, Stream};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

/// Radio and geometry constants of a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelParams {
    pub carrier_frequency_hz: f64,
    pub bs_antenna_gain_linear: f64,
    pub client_antenna_gain_linear: f64,
    pub path_loss_exponent: f64,
    pub transmit_power_w: f64,
    pub noise_power_w: f64,
    pub field_side_m: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            carrier_frequency_hz: 915e6,
            bs_antenna_gain_linear: db_to_linear(5.0),
            client_antenna_gain_linear: 1.0,
            path_loss_exponent: 3.76,
            transmit_power_w: 0.1,
            noise_power_w: 0.001,
            field_side_m: 100.0,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("carrier_frequency_hz", self.carrier_frequency_hz),
            ("bs_antenna_gain_linear", self.bs_antenna_gain_linear),
            ("client_antenna_gain_linear", self.client_antenna_gain_linear),
            ("path_loss_exponent", self.path_loss_exponent),
            ("transmit_power_w", self.transmit_power_w),
            ("noise_power_w", self.noise_power_w),
            ("field_side_m", self.field_side_m),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientProfile {
    pub id: usize,
    pub position: Position,
    pub transmit_power_w: f64,
    /// Index of the client's shard in the run's partition.
    pub dataset_ref: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BsPlacement {
    #[default]
    Random,
    Center,
}

/// Clients and base station placed in the square field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deployment {
    pub clients: Vec<ClientProfile>,
    pub bs: Position,
}

/// Places `count` clients and the base station uniformly in the field.
pub fn place_clients(count: usize, params: &ChannelParams, seed: u64) -> Result<Deployment> {
    place_clients_with(count, params, seed, BsPlacement::Random)
}

pub fn place_clients_with(
    count: usize,
    params: &ChannelParams,
    seed: u64,
    bs: BsPlacement,
) -> Result<Deployment> {
    if count == 0 {
        return Err(invalid("client count must be >= 1"));
    }
    params.validate()?;
    let side = params.field_side_m;
    let mut rng = seed::rng(seed, Stream::Placement, 0, 0, 0);
    let clients = (0..count)
        .map(|id| ClientProfile {
            id,
            position: Position::new(rng.random_range(0.0..=side), rng.random_range(0.0..=side)),
            transmit_power_w: params.transmit_power_w,
            dataset_ref: id,
        })
        .collect();
    // The BS draw always happens so that client positions do not depend on
    // the placement mode.
    let random_bs = Position::new(rng.random_range(0.0..=side), rng.random_range(0.0..=side));
    let bs = match bs {
        BsPlacement::Random => random_bs,
        BsPlacement::Center => Position::new(side / 2.0, side / 2.0),
    };
    Ok(Deployment { clients, bs })
}

/// Linear power gain `G_BS * G_D * (c / (4 pi f_c d))^P`.
pub fn path_loss(distance_m: f64, params: &ChannelParams) -> Result<f64> {
    if !(distance_m > 0.0) || !distance_m.is_finite() {
        return Err(invalid(format!("distance must be finite and > 0, got {distance_m}")));
    }
    let free_space = SPEED_OF_LIGHT / (4.0 * std::f64::consts::PI * params.carrier_frequency_hz * distance_m);
    Ok(params.bs_antenna_gain_linear
        * params.client_antenna_gain_linear
        * free_space.powf(params.path_loss_exponent))
}

/// Small-scale fading applied on top of path loss. Drawn once per run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Fading {
    #[default]
    None,
    /// Unit-mean exponential power factor per link (Rayleigh amplitude).
    Rayleigh { seed: u64 },
}

/// Symmetric K x K matrix of linear SNRs. Entry `(i, i)` is the client-to-BS
/// SNR, entry `(i, j)` the SNR of the link between clients `i` and `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrMatrix {
    k: usize,
    values: Vec<f64>,
}

impl SnrMatrix {
    /// Builds a matrix from row-major values, checking the invariants.
    pub fn from_values(k: usize, values: Vec<f64>) -> Result<Self> {
        if k == 0 || values.len() != k * k {
            return Err(invalid(format!("SNR matrix needs {k}x{k} values, got {}", values.len())));
        }
        for i in 0..k {
            for j in 0..k {
                let v = values[i * k + j];
                if !(v.is_finite() && v >= 0.0) {
                    return Err(invalid(format!("SNR ({i},{j}) = {v} is not finite and >= 0")));
                }
                if v != values[j * k + i] {
                    return Err(invalid(format!("SNR matrix is not symmetric at ({i},{j})")));
                }
            }
        }
        Ok(Self { k, values })
    }

    pub fn len(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        self.k == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.k + j]
    }

    /// Client-to-BS SNR.
    pub fn bs_snr(&self, i: usize) -> f64 {
        self.get(i, i)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            k: self.k,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }
}

pub fn build_snr_matrix(clients: &[ClientProfile], bs: Position, params: &ChannelParams) -> Result<SnrMatrix> {
    build_snr_matrix_with_fading(clients, bs, params, Fading::None)
}

/// Builds the SNR matrix. With unequal transmit powers the two directed SNRs
/// of a client pair are averaged so the matrix stays symmetric.
pub fn build_snr_matrix_with_fading(
    clients: &[ClientProfile],
    bs: Position,
    params: &ChannelParams,
    fading: Fading,
) -> Result<SnrMatrix> {
    if clients.is_empty() {
        return Err(invalid("at least one client is required"));
    }
    params.validate()?;
    let k = clients.len();
    let mut fading_rng = match fading {
        Fading::None => None,
        Fading::Rayleigh { seed } => Some(seed::rng(seed, Stream::Fading, 0, 0, 0)),
    };
    let mut fade = || -> f64 {
        match fading_rng.as_mut() {
            Some(rng) => Exp1.sample(rng),
            None => 1.0,
        }
    };
    let mut values = vec![0.0; k * k];
    for i in 0..k {
        let ci = &clients[i];
        if !(ci.transmit_power_w > 0.0) {
            return Err(invalid(format!("client {} transmit power must be > 0", ci.id)));
        }
        let d_bs = ci.position.distance(&bs);
        if d_bs <= 0.0 {
            return Err(Error::DegenerateGeometry(format!("client {} coincides with the BS", ci.id)));
        }
        values[i * k + i] = ci.transmit_power_w * path_loss(d_bs, params)? * fade() / params.noise_power_w;
        for j in (i + 1)..k {
            let cj = &clients[j];
            let d = ci.position.distance(&cj.position);
            if d <= 0.0 {
                return Err(Error::DegenerateGeometry(format!(
                    "clients {} and {} share a position",
                    ci.id, cj.id
                )));
            }
            let power = if ci.transmit_power_w == cj.transmit_power_w {
                ci.transmit_power_w
            } else {
                0.5 * (ci.transmit_power_w + cj.transmit_power_w)
            };
            let snr = power * path_loss(d, params)? * fade() / params.noise_power_w;
            values[i * k + j] = snr;
            values[j * k + i] = snr;
        }
    }
    SnrMatrix::from_values(k, values)
}
