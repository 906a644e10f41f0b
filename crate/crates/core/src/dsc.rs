//! Dual-segment clustering: channel-quality groups first, then label-diversity
//! groups inside each of them, then nearest-leader assignment of leftovers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::affinity::{self, ApConfig, ClusterAssignment, SelfAvailability, SimilarityMatrix};
use crate::datamap::{self, DataSimilaritySign, InfoQuantityMatrix, LabelHistogram};
use crate::error::{invalid, Error, Result};
use crate::topology::{ClientProfile, SnrMatrix};

/// Off-diagonal entries of the channel similarity matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommKernel {
    /// `s(i,k) = -snr(i,k)^2`.
    #[default]
    PaperNegSquaredSnr,
    /// `s(i,k) = -(snr_i - snr_k)^2` over client-to-BS SNRs.
    NegSquaredSnrDiff,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DscConfig {
    /// Multiplies the median off-diagonal channel similarity to give the preference.
    pub comm_preference_scale: f64,
    /// Multiplies the median off-diagonal data similarity to give the preference.
    pub data_preference_scale: f64,
    pub damping: f64,
    pub stable_rounds: usize,
    pub max_iterations: usize,
    pub comm_similarity_kernel: CommKernel,
    pub self_availability: SelfAvailability,
    pub data_similarity_sign: DataSimilaritySign,
}

impl Default for DscConfig {
    fn default() -> Self {
        Self {
            comm_preference_scale: 1.0,
            data_preference_scale: 1.0,
            damping: 0.5,
            stable_rounds: 10,
            max_iterations: 500,
            comm_similarity_kernel: CommKernel::default(),
            self_availability: SelfAvailability::default(),
            data_similarity_sign: DataSimilaritySign::default(),
        }
    }
}

impl DscConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.damping) {
            return Err(invalid(format!("damping must be in [0, 1), got {}", self.damping)));
        }
        if self.stable_rounds == 0 || self.max_iterations == 0 {
            return Err(invalid("stable_rounds and max_iterations must be >= 1"));
        }
        if !self.comm_preference_scale.is_finite() || !self.data_preference_scale.is_finite() {
            return Err(invalid("preference scales must be finite"));
        }
        Ok(())
    }

    pub fn ap(&self) -> ApConfig {
        ApConfig {
            damping: self.damping,
            stable_rounds_required: self.stable_rounds,
            max_iterations: self.max_iterations,
            self_availability: self.self_availability,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Primary,
    Final,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Group {
    pub leader: usize,
    /// Ascending; always contains `leader`.
    pub members: Vec<usize>,
    /// Index of the primary group this group was split from.
    pub primary_group: Option<usize>,
    /// Exemplar of that primary group.
    pub primary_leader: Option<usize>,
}

impl Group {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupStructure {
    pub num_clients: usize,
    pub stage: Stage,
    pub groups: Vec<Group>,
    /// Clients not yet in any group; see [`assign_stragglers`].
    #[serde(default)]
    pub unassigned: Vec<usize>,
    /// False when any affinity run hit its iteration cap.
    pub converged: bool,
}

impl GroupStructure {
    /// Every client leads its own group.
    pub fn singletons(num_clients: usize, stage: Stage) -> Self {
        Self {
            num_clients,
            stage,
            groups: (0..num_clients)
                .map(|k| Group { leader: k, members: vec![k], primary_group: None, primary_leader: None })
                .collect(),
            unassigned: Vec::new(),
            converged: true,
        }
    }

    fn from_assignment(members: &[usize], a: &ClusterAssignment) -> Vec<Group> {
        a.groups()
            .into_iter()
            .map(|(leader, local)| Group {
                leader: members[leader],
                members: local.into_iter().map(|i| members[i]).collect(),
                primary_group: None,
                primary_leader: None,
            })
            .collect()
    }

    /// Group index of each client (`None` for unassigned clients).
    pub fn group_of(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.num_clients];
        for (g, group) in self.groups.iter().enumerate() {
            for &m in &group.members {
                out[m] = Some(g);
            }
        }
        out
    }

    /// Checks that groups are non-empty, disjoint, contain their leaders, and
    /// together with `unassigned` cover every client exactly once.
    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.num_clients];
        let mut mark = |c: usize| -> Result<()> {
            if c >= self.num_clients {
                return Err(Error::InvalidState(format!("client {c} out of range")));
            }
            if std::mem::replace(&mut seen[c], true) {
                return Err(Error::InvalidState(format!("client {c} appears twice")));
            }
            Ok(())
        };
        for (g, group) in self.groups.iter().enumerate() {
            if group.members.is_empty() {
                return Err(Error::InvalidState(format!("group {g} is empty")));
            }
            if !group.members.contains(&group.leader) {
                return Err(Error::InvalidState(format!("group {g} does not contain its leader")));
            }
            for &m in &group.members {
                mark(m)?;
            }
        }
        for &u in &self.unassigned {
            mark(u)?;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidState(format!("client {missing} is in no group")));
        }
        Ok(())
    }

    /// Validates and additionally requires every client to be grouped.
    pub fn validate_complete(&self) -> Result<()> {
        self.validate()?;
        if !self.unassigned.is_empty() {
            return Err(Error::InvalidState(format!("{} clients unassigned", self.unassigned.len())));
        }
        Ok(())
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.groups.iter().map(Group::len).collect()
    }

    /// Mean number of distinct labels held by the members of a group.
    pub fn mean_label_coverage(&self, histograms: &[LabelHistogram]) -> f64 {
        if self.groups.is_empty() {
            return 0.0;
        }
        let total: usize = self.groups.iter().map(|g| label_coverage(&g.members, histograms)).sum();
        total as f64 / self.groups.len() as f64
    }
}

/// Number of distinct labels among the given clients.
pub fn label_coverage(members: &[usize], histograms: &[LabelHistogram]) -> usize {
    let labels = histograms.first().map_or(0, LabelHistogram::num_labels);
    (0..labels).filter(|&l| members.iter().any(|&m| histograms[m].counts()[l] > 0)).count()
}

/// Channel similarity over all clients with a constant diagonal preference.
pub fn comm_similarity(snr: &SnrMatrix, preference: f64, kernel: CommKernel) -> Result<SimilarityMatrix> {
    SimilarityMatrix::from_fn(snr.len(), preference, |i, k| match kernel {
        CommKernel::PaperNegSquaredSnr => -snr.get(i, k) * snr.get(i, k),
        CommKernel::NegSquaredSnrDiff => {
            let d = snr.bs_snr(i) - snr.bs_snr(k);
            -d * d
        }
    })
}

/// Median of the off-diagonal entries times `scale`; 0 for a single point.
fn scaled_median(sim: &SimilarityMatrix, scale: f64) -> f64 {
    sim.median_off_diagonal().map_or(0.0, |m| m * scale)
}

/// Affinity propagation on the channel similarity matrix.
pub fn cluster_primary(snr: &SnrMatrix, cfg: &DscConfig) -> Result<GroupStructure> {
    cfg.validate()?;
    let mut sim = comm_similarity(snr, 0.0, cfg.comm_similarity_kernel)?;
    sim.set_preference(scaled_median(&sim, cfg.comm_preference_scale))?;
    let out = affinity::cluster(&sim, &cfg.ap())?;
    if !out.converged {
        log::warn!("primary clustering did not converge in {} sweeps", out.iterations);
    }
    let members: Vec<usize> = (0..snr.len()).collect();
    Ok(GroupStructure {
        num_clients: snr.len(),
        stage: Stage::Primary,
        groups: GroupStructure::from_assignment(&members, &out.assignment),
        unassigned: Vec::new(),
        converged: out.converged,
    })
}

/// Clusters `members` on data similarity. Returns groups in global indices
/// and whether message passing converged.
pub fn cluster_by_data(
    members: &[usize],
    xi: &InfoQuantityMatrix,
    snr: &SnrMatrix,
    cfg: &DscConfig,
) -> Result<(Vec<Group>, bool)> {
    if members.len() == 1 {
        return Ok((
            vec![Group { leader: members[0], members: members.to_vec(), primary_group: None, primary_leader: None }],
            true,
        ));
    }
    let mut sim = datamap::data_similarity(xi, members, 0.0, cfg.data_similarity_sign)?;
    if sim.is_zero_off_diagonal() {
        // Every member is interchangeable; the best uplink leads.
        let mut leader = members[0];
        for &m in members {
            if snr.bs_snr(m) > snr.bs_snr(leader) {
                leader = m;
            }
        }
        let mut sorted = members.to_vec();
        sorted.sort_unstable();
        return Ok((vec![Group { leader, members: sorted, primary_group: None, primary_leader: None }], true));
    }
    sim.set_preference(scaled_median(&sim, cfg.data_preference_scale))?;
    let out = affinity::cluster(&sim, &cfg.ap())?;
    Ok((GroupStructure::from_assignment(members, &out.assignment), out.converged))
}

/// Splits every primary group by data similarity. Final groups never cross
/// primary boundaries; output order follows primary-group order.
pub fn cluster_secondary(
    primary: &GroupStructure,
    xi: &InfoQuantityMatrix,
    snr: &SnrMatrix,
    cfg: &DscConfig,
) -> Result<GroupStructure> {
    cfg.validate()?;
    if primary.stage != Stage::Primary {
        return Err(Error::InvalidState("secondary clustering needs a primary-stage structure".into()));
    }
    if xi.clients() != primary.num_clients || snr.len() != primary.num_clients {
        return Err(invalid("information matrix, SNR matrix and groups disagree on client count"));
    }
    let per_group: Vec<Result<(Vec<Group>, bool)>> = primary
        .groups
        .par_iter()
        .map(|g| cluster_by_data(&g.members, xi, snr, cfg))
        .collect();
    let mut groups = Vec::new();
    let mut converged = primary.converged;
    for (p, result) in per_group.into_iter().enumerate() {
        let (subgroups, ok) = result?;
        converged &= ok;
        groups.extend(subgroups.into_iter().map(|mut g| {
            g.primary_group = Some(p);
            g.primary_leader = Some(primary.groups[p].leader);
            g
        }));
    }
    Ok(GroupStructure {
        num_clients: primary.num_clients,
        stage: Stage::Final,
        groups,
        unassigned: primary.unassigned.clone(),
        converged,
    })
}

/// Moves every unassigned client into the group whose leader is closest.
/// Ties go to the lower leader index.
pub fn assign_stragglers(groups: &GroupStructure, clients: &[ClientProfile]) -> Result<GroupStructure> {
    if groups.groups.is_empty() {
        return Err(Error::InvalidState("no groups to assign stragglers to".into()));
    }
    if clients.len() != groups.num_clients {
        return Err(invalid("client list does not match the group structure"));
    }
    let mut out = groups.clone();
    for &c in &groups.unassigned {
        let here = clients[c].position;
        let mut best: Option<(f64, usize, usize)> = None;
        for (g, group) in out.groups.iter().enumerate() {
            let d = here.distance(&clients[group.leader].position);
            let better = match best {
                None => true,
                Some((bd, bl, _)) => d < bd || (d == bd && group.leader < bl),
            };
            if better {
                best = Some((d, group.leader, g));
            }
        }
        let (_, _, g) = best.expect("groups is non-empty");
        let members = &mut out.groups[g].members;
        members.push(c);
        members.sort_unstable();
    }
    out.unassigned.clear();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DscOutcome {
    pub primary: GroupStructure,
    pub groups: GroupStructure,
}

/// Full pipeline: primary, secondary, stragglers.
pub fn run_dsc(
    snr: &SnrMatrix,
    xi: &InfoQuantityMatrix,
    clients: &[ClientProfile],
    cfg: &DscConfig,
) -> Result<DscOutcome> {
    let primary = cluster_primary(snr, cfg)?;
    primary.validate_complete()?;
    let secondary = cluster_secondary(&primary, xi, snr, cfg)?;
    secondary.validate()?;
    let groups = assign_stragglers(&secondary, clients)?;
    groups.validate_complete()?;
    Ok(DscOutcome { primary, groups })
}

/// Single-stage clustering of all clients on data similarity.
pub fn run_data_only(snr: &SnrMatrix, xi: &InfoQuantityMatrix, cfg: &DscConfig) -> Result<GroupStructure> {
    cfg.validate()?;
    let members: Vec<usize> = (0..snr.len()).collect();
    let (groups, converged) = cluster_by_data(&members, xi, snr, cfg)?;
    let gs = GroupStructure { num_clients: snr.len(), stage: Stage::Final, groups, unassigned: Vec::new(), converged };
    gs.validate_complete()?;
    Ok(gs)
}
