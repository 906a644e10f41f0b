//! Per-link gradient transport.
//!
//! A noisy link adds i.i.d. zero-mean Gaussian noise to every coordinate with
//! variance `(|g|^2 / q) / snr`, i.e. the transmitter normalises its signal
//! power and the receiver sees the link's SNR per coordinate.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::GradientVector;
use crate::error::{invalid, Result};
use crate::seed::{self, Stream};

/// Receiver id used for the base station.
pub const BS_NODE: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    #[default]
    Ideal,
    AwgnBySnr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LinkNoiseModel {
    pub mode: NoiseMode,
    pub seed: u64,
}

impl LinkNoiseModel {
    pub fn ideal() -> Self {
        Self::default()
    }

    pub fn awgn(seed: u64) -> Self {
        Self { mode: NoiseMode::AwgnBySnr, seed }
    }
}

/// Identifies one use of a link. The noise stream is keyed on it, so draws
/// do not depend on the order in which links are simulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkUse {
    pub round: u64,
    pub from: u64,
    pub to: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transmission {
    pub received: GradientVector,
    /// Squared norm of the injected perturbation.
    pub noise_sq_norm: f64,
}

pub fn transmit(grad: &GradientVector, link_snr: f64, noise: &LinkNoiseModel, link: LinkUse) -> Result<Transmission> {
    match noise.mode {
        NoiseMode::Ideal => Ok(Transmission { received: grad.clone(), noise_sq_norm: 0.0 }),
        NoiseMode::AwgnBySnr => {
            if !(link_snr > 0.0) || link_snr.is_nan() {
                return Err(invalid(format!("link SNR must be > 0 in noisy mode, got {link_snr}")));
            }
            let q = grad.values.len();
            let mut received = grad.clone();
            if q == 0 || link_snr.is_infinite() {
                return Ok(Transmission { received, noise_sq_norm: 0.0 });
            }
            let signal_power = grad.sq_norm() / q as f64;
            let std = (signal_power / link_snr).sqrt();
            let mut rng = seed::rng(noise.seed, Stream::LinkNoise, link.round, link.from, link.to);
            let mut noise_sq_norm = 0.0;
            for v in &mut received.values {
                let z: f64 = StandardNormal.sample(&mut rng);
                let n = std * z;
                noise_sq_norm += n * n;
                *v += n;
            }
            Ok(Transmission { received, noise_sq_norm })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grad(values: Vec<f64>) -> GradientVector {
        GradientVector { values, source: 0, round: 0, sample_count: 1 }
    }

    fn link(round: u64) -> LinkUse {
        LinkUse { round, from: 0, to: BS_NODE }
    }

    #[test]
    fn ideal_is_identity() {
        let g = grad(vec![1.5, -2.0, 1e-300]);
        let t = transmit(&g, 0.001, &LinkNoiseModel::ideal(), link(0)).unwrap();
        assert_eq!(t.received, g);
        assert_eq!(t.noise_sq_norm, 0.0);
    }

    #[test]
    fn noisy_rejects_bad_snr() {
        let g = grad(vec![1.0]);
        assert!(transmit(&g, 0.0, &LinkNoiseModel::awgn(1), link(0)).is_err());
        assert!(transmit(&g, -1.0, &LinkNoiseModel::awgn(1), link(0)).is_err());
    }

    #[test]
    fn variance_vanishes_as_snr_grows() {
        let g = grad(vec![0.6, 0.8]);
        let mut last = f64::INFINITY;
        for snr in [1e2, 1e6, 1e10] {
            let mean: f64 = (0..200)
                .map(|r| transmit(&g, snr, &LinkNoiseModel::awgn(3), link(r)).unwrap().noise_sq_norm)
                .sum::<f64>()
                / 200.0;
            assert!(mean < last);
            last = mean;
        }
        assert!(last < 1e-9);
        let t = transmit(&g, f64::INFINITY, &LinkNoiseModel::awgn(3), link(0)).unwrap();
        assert_eq!(t.received, g);
    }

    #[test]
    fn same_link_use_same_noise() {
        let g = grad(vec![1.0, 2.0, 3.0]);
        let n = LinkNoiseModel::awgn(9);
        let a = transmit(&g, 5.0, &n, link(4)).unwrap();
        assert_eq!(a, transmit(&g, 5.0, &n, link(4)).unwrap());
        assert_ne!(a, transmit(&g, 5.0, &n, link(5)).unwrap());
    }
}
