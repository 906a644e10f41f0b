//! Two-tier aggregation: members to leader, leaders to base station.

use std::f64::consts::FRAC_PI_2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::transport::{transmit, LinkNoiseModel, LinkUse, BS_NODE};
use super::GradientVector;
use crate::dsc::GroupStructure;
use crate::error::{invalid, Error, Result};
use crate::topology::SnrMatrix;

/// `f(theta) = 1 - exp(-exp(-(theta - 1)))`.
pub fn angle_weight(theta: f64) -> f64 {
    1.0 - (-(-(theta - 1.0)).exp()).exp()
}

/// Angle between two gradients; `pi/2` when either has zero norm.
fn angle(a: &[f64], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return FRAC_PI_2;
    }
    (ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0).acos()
}

/// Intra-group weights `|D_k| e^{f(theta_k)} / sum_i |D_i| e^{f(theta_i)}`
/// with `theta_k` measured against the leader's gradient. A member whose
/// `source` equals the leader's gets `theta = 0`.
pub fn intra_weights(leader: &GradientVector, members: &[&GradientVector]) -> Result<Vec<f64>> {
    if members.is_empty() {
        return Err(invalid("a group needs at least one member"));
    }
    if members.iter().any(|m| m.values.len() != leader.values.len()) {
        return Err(invalid("gradient dimensions differ within a group"));
    }
    let raw: Vec<f64> = members
        .iter()
        .map(|m| {
            let theta = if m.source == leader.source { 0.0 } else { angle(&leader.values, &m.values) };
            m.sample_count as f64 * angle_weight(theta).exp()
        })
        .collect();
    normalise(raw)
}

fn data_size_weights(sizes: impl Iterator<Item = usize>) -> Result<Vec<f64>> {
    normalise(sizes.map(|s| s as f64).collect())
}

fn normalise(raw: Vec<f64>) -> Result<Vec<f64>> {
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidState("aggregation weights sum to zero".into()));
    }
    Ok(raw.into_iter().map(|w| w / total).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntraWeighting {
    /// Angle-aware weights for Non-IID groups.
    #[default]
    AngleAware,
    /// Plain `|D_k| / sum |D_i|`.
    DataSize,
}

/// Weights used in one round: `intra[l][j]` for the `j`-th member of group
/// `l` (member order of the group structure) and `inter[l]` per group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationWeights {
    pub intra: Vec<Vec<f64>>,
    pub inter: Vec<f64>,
}

impl AggregationWeights {
    pub fn validate(&self) -> Result<()> {
        let ok_sum = |w: &[f64]| w.iter().all(|x| (0.0..=1.0).contains(x)) && (w.iter().sum::<f64>() - 1.0).abs() <= 1e-12;
        if self.intra.len() != self.inter.len() {
            return Err(invalid("intra and inter weights disagree on the number of groups"));
        }
        if !ok_sum(&self.inter) {
            return Err(invalid("inter-group weights must lie in [0,1] and sum to 1"));
        }
        for (l, w) in self.intra.iter().enumerate() {
            if !ok_sum(w) {
                return Err(invalid(format!("intra weights of group {l} must lie in [0,1] and sum to 1")));
            }
        }
        Ok(())
    }

    /// `sum_l G_l^2 * sum_k G_k^2`.
    pub fn energy(&self) -> f64 {
        self.inter
            .iter()
            .zip(&self.intra)
            .map(|(gl, intra)| gl * gl * intra.iter().map(|g| g * g).sum::<f64>())
            .sum()
    }

    /// Data-size weights for a group structure.
    pub fn data_size(groups: &GroupStructure, sample_counts: &[usize]) -> Result<Self> {
        let intra = groups
            .groups
            .iter()
            .map(|g| data_size_weights(g.members.iter().map(|&m| sample_counts[m])))
            .collect::<Result<Vec<_>>>()?;
        let inter = data_size_weights(groups.groups.iter().map(|g| g.members.iter().map(|&m| sample_counts[m]).sum()))?;
        Ok(Self { intra, inter })
    }
}

/// `sum_l G_l * sum_k G_k * g_k` over already-received gradients, in group
/// and member order.
pub fn combine(groups: &GroupStructure, grads: &[&[f64]], weights: &AggregationWeights) -> Result<Vec<f64>> {
    let q = grads.first().map_or(0, |g| g.len());
    let mut out = vec![0.0; q];
    for (l, group) in groups.groups.iter().enumerate() {
        for (j, &m) in group.members.iter().enumerate() {
            let g = grads.get(m).ok_or_else(|| Error::InvalidState(format!("missing gradient for client {m}")))?;
            let w = weights.inter[l] * weights.intra[l][j];
            for (o, v) in out.iter_mut().zip(g.iter()) {
                *o += w * v;
            }
        }
    }
    Ok(out)
}

/// Norm statistics of one group in one round, computed on clean (pre-noise)
/// local gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTrace {
    pub leader: usize,
    pub members: Vec<usize>,
    pub intra_weights: Vec<f64>,
    pub inter_weight: f64,
    pub member_sq_norms: Vec<f64>,
    /// `|sum_k G_k g_k|^2`.
    pub aggregate_sq_norm: f64,
    /// Injected noise on member-to-leader links (0 for the leader itself).
    pub intra_noise_sq: Vec<f64>,
    /// Injected noise on the leader-to-BS link.
    pub inter_noise_sq: f64,
}

/// Everything the convergence diagnostics need from one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub round: usize,
    pub groups: Vec<GroupTrace>,
    /// `|sum_l G_l sum_k G_k g_k|^2` on clean gradients.
    pub global_sq_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundAggregate {
    pub global: GradientVector,
    pub weights: AggregationWeights,
    pub trace: RoundTrace,
}

struct GroupResult {
    at_bs: Vec<f64>,
    clean: Vec<f64>,
    intra: Vec<f64>,
    trace: GroupTrace,
}

/// One round of hierarchical aggregation. `grads[k]` must be client `k`'s
/// gradient. Members send to their leader over the client-client SNR, the
/// leader combines, then sends to the BS over its own BS SNR; the BS combines
/// groups by data size.
pub fn aggregate_round(
    groups: &GroupStructure,
    grads: &[GradientVector],
    intra: IntraWeighting,
    noise: &LinkNoiseModel,
    snr: &SnrMatrix,
    round: usize,
) -> Result<RoundAggregate> {
    groups.validate_complete()?;
    if groups.groups.is_empty() {
        return Err(Error::InvalidState("no groups".into()));
    }
    if snr.len() != groups.num_clients {
        return Err(invalid("SNR matrix does not match the client count"));
    }
    for k in 0..groups.num_clients {
        match grads.get(k) {
            Some(g) if g.source == k => {}
            _ => return Err(Error::InvalidState(format!("missing gradient for client {k}"))),
        }
    }
    let q = grads[0].values.len();
    if grads.iter().any(|g| g.values.len() != q) {
        return Err(invalid("gradients differ in length"));
    }
    let round_key = round as u64;

    let results: Vec<Result<GroupResult>> = groups
        .groups
        .par_iter()
        .map(|group| -> Result<GroupResult> {
            let leader = &grads[group.leader];
            let mut received = Vec::with_capacity(group.members.len());
            let mut intra_noise_sq = Vec::with_capacity(group.members.len());
            for &m in &group.members {
                if m == group.leader {
                    received.push(leader.clone());
                    intra_noise_sq.push(0.0);
                } else {
                    let link = LinkUse { round: round_key, from: m as u64, to: group.leader as u64 };
                    let t = transmit(&grads[m], snr.get(m, group.leader), noise, link)?;
                    received.push(t.received);
                    intra_noise_sq.push(t.noise_sq_norm);
                }
            }
            let refs: Vec<&GradientVector> = received.iter().collect();
            let w = match intra {
                IntraWeighting::AngleAware => intra_weights(leader, &refs)?,
                IntraWeighting::DataSize => data_size_weights(received.iter().map(|g| g.sample_count))?,
            };
            let mut sum = vec![0.0; q];
            let mut clean = vec![0.0; q];
            for ((r, &m), wk) in received.iter().zip(&group.members).zip(&w) {
                for i in 0..q {
                    sum[i] += wk * r.values[i];
                    clean[i] += wk * grads[m].values[i];
                }
            }
            let leader_sum = GradientVector {
                values: sum,
                source: group.leader,
                round,
                sample_count: group.members.iter().map(|&m| grads[m].sample_count).sum(),
            };
            let uplink = LinkUse { round: round_key, from: group.leader as u64, to: BS_NODE };
            let t = transmit(&leader_sum, snr.bs_snr(group.leader), noise, uplink)?;
            let trace = GroupTrace {
                leader: group.leader,
                members: group.members.clone(),
                intra_weights: w.clone(),
                inter_weight: 0.0,
                member_sq_norms: group.members.iter().map(|&m| grads[m].sq_norm()).collect(),
                aggregate_sq_norm: clean.iter().map(|v| v * v).sum(),
                intra_noise_sq,
                inter_noise_sq: t.noise_sq_norm,
            };
            Ok(GroupResult { at_bs: t.received.values, clean, intra: w, trace })
        })
        .collect();
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;

    let inter = data_size_weights(
        groups.groups.iter().map(|g| g.members.iter().map(|&m| grads[m].sample_count).sum()),
    )?;
    let mut global = vec![0.0; q];
    let mut clean_global = vec![0.0; q];
    for (r, gl) in results.iter().zip(&inter) {
        for i in 0..q {
            global[i] += gl * r.at_bs[i];
            clean_global[i] += gl * r.clean[i];
        }
    }
    let mut intra_w = Vec::with_capacity(results.len());
    let mut traces = Vec::with_capacity(results.len());
    for (r, gl) in results.into_iter().zip(&inter) {
        intra_w.push(r.intra);
        traces.push(GroupTrace { inter_weight: *gl, ..r.trace });
    }
    let total_samples = grads.iter().map(|g| g.sample_count).sum();
    Ok(RoundAggregate {
        global: GradientVector { values: global, source: BS_NODE as usize, round, sample_count: total_samples },
        weights: AggregationWeights { intra: intra_w, inter },
        trace: RoundTrace {
            round,
            groups: traces,
            global_sq_norm: clean_global.iter().map(|v| v * v).sum(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsc::{Group, Stage};

    fn gv(source: usize, values: Vec<f64>, n: usize) -> GradientVector {
        GradientVector { values, source, round: 0, sample_count: n }
    }

    #[test]
    fn angle_weight_reference_values() {
        // 50-digit evaluations of 1 - exp(-exp(-(theta - 1))).
        assert!((angle_weight(1.0) - 0.632_120_558_828_557_678_4).abs() < 1e-6);
        assert!((angle_weight(0.0) - 0.934_011_964_154_687_462_9).abs() < 1e-6);
        assert!((angle_weight(FRAC_PI_2) - 0.431_682_634_886_618_354_5).abs() < 1e-6);
        assert!((angle_weight(std::f64::consts::PI) - 0.110_830_687_417_107_964_8).abs() < 1e-6);
    }

    #[test]
    fn parallel_members_get_data_size_weights() {
        let leader = gv(0, vec![1.0, 0.0], 100);
        let a = gv(1, vec![2.0, 0.0], 300);
        let ws = intra_weights(&leader, &[&leader, &a]).unwrap();
        assert!((ws[0] - 0.25).abs() < 1e-15);
        assert!((ws[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn antiparallel_member_is_lighter() {
        let leader = gv(0, vec![1.0, 0.0], 50);
        let par = gv(1, vec![3.0, 0.0], 50);
        let anti = gv(2, vec![-1.0, 0.0], 50);
        let ws = intra_weights(&leader, &[&par, &anti]).unwrap();
        assert!(ws[0] > ws[1]);
        // e^{f(0)} / e^{f(pi)} from a 50-digit evaluation.
        assert!((ws[0] / ws[1] - 2.277_734_427_362_908_266_2).abs() < 1e-12);
    }

    #[test]
    fn zero_norm_gradient_gets_neutral_angle() {
        let leader = gv(0, vec![1.0, 0.0], 10);
        let zero = gv(1, vec![0.0, 0.0], 10);
        let orth = gv(2, vec![0.0, 5.0], 10);
        let ws = intra_weights(&leader, &[&zero, &orth]).unwrap();
        assert!((ws[0] - ws[1]).abs() < 1e-15);
    }

    fn groups(spec: Vec<(usize, Vec<usize>)>, n: usize) -> GroupStructure {
        GroupStructure {
            num_clients: n,
            stage: Stage::Final,
            groups: spec
                .into_iter()
                .map(|(leader, members)| Group { leader, members, primary_group: None, primary_leader: None })
                .collect(),
            unassigned: vec![],
            converged: true,
        }
    }

    fn unit_snr(n: usize) -> SnrMatrix {
        SnrMatrix::from_values(n, vec![1.0; n * n]).unwrap()
    }

    #[test]
    fn degenerate_hierarchy_returns_the_gradient() {
        let gs = groups(vec![(0, vec![0])], 1);
        let g = gv(0, vec![0.1, -0.2, 0.3], 7);
        let out = aggregate_round(&gs, &[g.clone()], IntraWeighting::AngleAware, &LinkNoiseModel::ideal(), &unit_snr(1), 0)
            .unwrap();
        assert_eq!(out.global.values, g.values);
    }

    #[test]
    fn singleton_groups_weighted_by_size() {
        let gs = groups(vec![(0, vec![0]), (1, vec![1])], 2);
        let g = [gv(0, vec![4.0, 0.0], 100), gv(1, vec![0.0, 4.0], 300)];
        let out =
            aggregate_round(&gs, &g, IntraWeighting::AngleAware, &LinkNoiseModel::ideal(), &unit_snr(2), 0).unwrap();
        assert_eq!(out.global.values, vec![1.0, 3.0]);
        out.weights.validate().unwrap();
    }

    #[test]
    fn missing_gradient_names_client() {
        let gs = groups(vec![(0, vec![0, 1])], 2);
        let g = [gv(0, vec![1.0], 1)];
        let err = aggregate_round(&gs, &g, IntraWeighting::DataSize, &LinkNoiseModel::ideal(), &unit_snr(2), 0)
            .unwrap_err();
        assert!(err.to_string().contains("client 1"));
    }

    #[test]
    fn weights_validation() {
        let ok = AggregationWeights { intra: vec![vec![0.5, 0.5]], inter: vec![1.0] };
        ok.validate().unwrap();
        assert_eq!(ok.energy(), 0.5);
        let bad = AggregationWeights { intra: vec![vec![0.5, 0.6]], inter: vec![1.0] };
        assert!(bad.validate().is_err());
    }
}
