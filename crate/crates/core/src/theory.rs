//! Convergence bound for hierarchical aggregation over noisy links, the
//! admissible learning rate, and estimation of the dissimilarity and
//! communication-impact factors from round traces.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::flcore::{AggregationWeights, RoundTrace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub mu: f64,
    pub lipschitz: f64,
    pub lambda: f64,
    pub delta_intra: f64,
    pub delta_inter: f64,
    /// `sigma_intra[l][j]`: mean squared noise on member `j` of group `l`.
    pub sigma_intra: Vec<Vec<f64>>,
    /// `sigma_inter[l]`: mean squared noise on leader `l`'s uplink.
    pub sigma_inter: Vec<f64>,
    pub weights: AggregationWeights,
    pub initial_gap: f64,
}

impl BoundParams {
    /// Noise-free parameters with the given weights.
    pub fn noiseless(mu: f64, lipschitz: f64, lambda: f64, weights: AggregationWeights, initial_gap: f64) -> Self {
        Self {
            mu,
            lipschitz,
            lambda,
            delta_intra: 1.0,
            delta_inter: 1.0,
            sigma_intra: weights.intra.iter().map(|g| vec![0.0; g.len()]).collect(),
            sigma_inter: vec![0.0; weights.inter.len()],
            weights,
            initial_gap,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.lipschitz.is_finite() && self.mu <= self.lipschitz) {
            return Err(invalid(format!("need 0 < mu <= L, got mu={} L={}", self.mu, self.lipschitz)));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(invalid(format!("learning rate must be finite and > 0, got {}", self.lambda)));
        }
        if !(self.delta_intra >= 1.0 && self.delta_inter >= 1.0) || !self.delta_intra.is_finite() || !self.delta_inter.is_finite() {
            return Err(invalid("dissimilarity factors must be finite and >= 1"));
        }
        if !(self.initial_gap >= 0.0 && self.initial_gap.is_finite()) {
            return Err(invalid("initial gap must be finite and >= 0"));
        }
        self.weights.validate()?;
        if self.sigma_inter.len() != self.weights.inter.len()
            || self.sigma_intra.len() != self.weights.intra.len()
            || self.sigma_intra.iter().zip(&self.weights.intra).any(|(s, w)| s.len() != w.len())
        {
            return Err(invalid("noise factors do not match the weight layout"));
        }
        let sigmas = self.sigma_inter.iter().chain(self.sigma_intra.iter().flatten());
        for s in sigmas {
            if !(*s >= 0.0 && s.is_finite()) {
                return Err(invalid("noise factors must be finite and >= 0"));
            }
        }
        Ok(())
    }

    /// `sum_l G_l^2 sigma_l^2 + sum_l sum_k G_k^2 sigma_k^2`.
    pub fn noise_sum(&self) -> f64 {
        let inter: f64 = self.weights.inter.iter().zip(&self.sigma_inter).map(|(g, s)| g * g * s).sum();
        let intra: f64 = self
            .weights
            .intra
            .iter()
            .zip(&self.sigma_intra)
            .flat_map(|(w, s)| w.iter().zip(s))
            .map(|(g, s)| g * g * s)
            .sum();
        inter + intra
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contraction {
    pub a: f64,
    /// `A >= 1`: the bound does not certify convergence.
    pub divergent: bool,
}

/// `A = 1 + mu L lambda^2 delta_inter^2 W delta_intra^2 - 2 mu lambda` with
/// `W = sum_l G_l^2 (sum_k G_k^2)`.
pub fn contraction_factor(p: &BoundParams) -> Result<Contraction> {
    p.validate()?;
    let w = p.weights.energy();
    let a = 1.0
        + p.mu * p.lipschitz * p.lambda * p.lambda * p.delta_inter.powi(2) * w * p.delta_intra.powi(2)
        - 2.0 * p.mu * p.lambda;
    Ok(Contraction { a, divergent: a >= 1.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundTrajectory {
    pub a: f64,
    pub divergent: bool,
    /// `bounds[t]` for `t = 0..=T`.
    pub bounds: Vec<f64>,
}

/// `bound(t) = A^t gap0 + (L lambda^2 / 2) N (1 - A^t) / (1 - A)`, where `N`
/// is [`BoundParams::noise_sum`]; at `A = 1` the series factor is `t`.
pub fn bound_trajectory(p: &BoundParams, rounds: usize) -> Result<BoundTrajectory> {
    if rounds == 0 {
        return Err(invalid("rounds must be >= 1"));
    }
    let Contraction { a, divergent } = contraction_factor(p)?;
    let c = p.lipschitz * p.lambda * p.lambda / 2.0 * p.noise_sum();
    let bounds = (0..=rounds)
        .map(|t| {
            let t = t as f64;
            let at = a.powf(t);
            let series = if a == 1.0 {
                t
            } else if a > 0.0 {
                -(t * a.ln()).exp_m1() / (1.0 - a)
            } else {
                (1.0 - at) / (1.0 - a)
            };
            at * p.initial_gap + c * series
        })
        .collect();
    Ok(BoundTrajectory { a, divergent, bounds })
}

/// `2 / (L delta_inter^2 W delta_intra^2)`.
pub fn max_learning_rate(lipschitz: f64, delta_intra: f64, delta_inter: f64, weights: &AggregationWeights) -> Result<f64> {
    if !(lipschitz > 0.0 && lipschitz.is_finite()) {
        return Err(invalid("L must be finite and > 0"));
    }
    if !(delta_intra >= 1.0 && delta_inter >= 1.0) {
        return Err(invalid("dissimilarity factors must be >= 1"));
    }
    weights.validate()?;
    Ok(2.0 / (lipschitz * delta_inter.powi(2) * weights.energy() * delta_intra.powi(2)))
}

/// Factors estimated from a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorEstimate {
    pub delta_intra: f64,
    pub delta_inter: f64,
    pub sigma_intra: Vec<Vec<f64>>,
    pub sigma_inter: Vec<f64>,
    /// Per-round weights averaged over the trace.
    pub weights: AggregationWeights,
    /// Rounds left out of a ratio because the denominator was zero.
    pub excluded_rounds: usize,
}

fn weighted_ratio(weights: &[f64], sq_norms: &[f64], denom: f64) -> Option<f64> {
    if denom > 0.0 {
        Some(weights.iter().zip(sq_norms).map(|(w, n)| w * n).sum::<f64>() / denom)
    } else {
        None
    }
}

/// `delta^2` is the largest weighted ratio `sum_k G_k |g_k|^2 / |sum_k G_k g_k|^2`
/// seen in any round (per group for intra, across group aggregates for
/// inter). Noise factors are per-link means of the injected squared norms.
pub fn estimate_factors(traces: &[RoundTrace]) -> Result<FactorEstimate> {
    let first = traces.first().ok_or_else(|| invalid("trace is empty"))?;
    let layout: Vec<Vec<usize>> = first.groups.iter().map(|g| g.members.clone()).collect();
    for t in traces {
        if t.groups.len() != layout.len() || t.groups.iter().zip(&layout).any(|(g, m)| &g.members != m) {
            return Err(Error::InvalidState(format!("group layout changes in round {}", t.round)));
        }
    }
    let rounds = traces.len() as f64;
    let mut intra_sq: f64 = 1.0;
    let mut inter_sq: f64 = 1.0;
    let mut excluded = 0;
    let mut sigma_intra: Vec<Vec<f64>> = layout.iter().map(|m| vec![0.0; m.len()]).collect();
    let mut sigma_inter = vec![0.0; layout.len()];
    let mut w_intra: Vec<Vec<f64>> = layout.iter().map(|m| vec![0.0; m.len()]).collect();
    let mut w_inter = vec![0.0; layout.len()];

    for t in traces {
        let mut skipped = false;
        for (l, g) in t.groups.iter().enumerate() {
            match weighted_ratio(&g.intra_weights, &g.member_sq_norms, g.aggregate_sq_norm) {
                Some(r) => intra_sq = intra_sq.max(r),
                None => skipped = true,
            }
            sigma_inter[l] += g.inter_noise_sq / rounds;
            w_inter[l] += g.inter_weight / rounds;
            for j in 0..g.members.len() {
                sigma_intra[l][j] += g.intra_noise_sq[j] / rounds;
                w_intra[l][j] += g.intra_weights[j] / rounds;
            }
        }
        let inter_w: Vec<f64> = t.groups.iter().map(|g| g.inter_weight).collect();
        let agg: Vec<f64> = t.groups.iter().map(|g| g.aggregate_sq_norm).collect();
        match weighted_ratio(&inter_w, &agg, t.global_sq_norm) {
            Some(r) => inter_sq = inter_sq.max(r),
            None => skipped = true,
        }
        if skipped {
            excluded += 1;
            warn!("round {}: zero aggregate gradient, left out of the dissimilarity estimate", t.round);
        }
    }
    // Renormalise averaged weights against rounding drift.
    let renorm = |w: &mut Vec<f64>| {
        let s: f64 = w.iter().sum();
        if s > 0.0 {
            w.iter_mut().for_each(|x| *x /= s);
        }
    };
    w_intra.iter_mut().for_each(renorm);
    renorm(&mut w_inter);
    Ok(FactorEstimate {
        delta_intra: intra_sq.sqrt(),
        delta_inter: inter_sq.sqrt(),
        sigma_intra,
        sigma_inter,
        weights: AggregationWeights { intra: w_intra, inter: w_inter },
        excluded_rounds: excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub round: usize,
    pub bound: f64,
    pub measured_gap: Option<f64>,
}

/// JSON-serialisable bound report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub a: f64,
    pub divergent: bool,
    pub lambda: f64,
    pub lambda_max: f64,
    pub params: BoundParams,
    pub rows: Vec<BoundRow>,
}

impl BoundReport {
    /// `measured_gaps[t]`, if given, is compared against `bound(t)`.
    pub fn new(params: BoundParams, rounds: usize, measured_gaps: Option<&[f64]>) -> Result<Self> {
        let traj = bound_trajectory(&params, rounds)?;
        let lambda_max = max_learning_rate(params.lipschitz, params.delta_intra, params.delta_inter, &params.weights)?;
        let rows = traj
            .bounds
            .iter()
            .enumerate()
            .map(|(t, &bound)| BoundRow { round: t, bound, measured_gap: measured_gaps.and_then(|g| g.get(t).copied()) })
            .collect();
        Ok(Self { a: traj.a, divergent: traj.divergent, lambda: params.lambda, lambda_max, params, rows })
    }

    /// Rounds where the measured gap exceeds the bound (with a relative slack).
    pub fn violations(&self, rel_tol: f64) -> Vec<usize> {
        self.rows
            .iter()
            .filter(|r| r.measured_gap.is_some_and(|g| g > r.bound * (1.0 + rel_tol) + 1e-300))
            .map(|r| r.round)
            .collect()
    }
}
