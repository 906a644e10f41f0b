//! Affinity propagation over a dense similarity matrix.
//!
//! Responsibility and availability messages are exchanged in synchronous
//! sweeps (every update reads only the previous sweep's matrices). Group
//! membership is read off the combined matrix `C = R + A`: row `i` points at
//! the column holding its maximum, and a row whose maximum sits on the
//! diagonal marks an exemplar.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Square similarity matrix. The diagonal holds preferences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    n: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(invalid(format!("similarity needs {n}x{n} values, got {}", values.len())));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("similarity entry ({}, {}) is not finite", pos / n.max(1), pos % n.max(1))));
        }
        Ok(Self { n, values })
    }

    /// Builds an `n x n` matrix from `f(i, k)` for off-diagonal entries and a
    /// constant preference on the diagonal.
    pub fn from_fn(n: usize, preference: f64, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                values[i * n + k] = if i == k { preference } else { f(i, k) };
            }
        }
        Self::new(n, values)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.values[i * self.n + k]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn set_preference(&mut self, preference: f64) -> Result<()> {
        if !preference.is_finite() {
            return Err(invalid("preference must be finite"));
        }
        for i in 0..self.n {
            self.values[i * self.n + i] = preference;
        }
        Ok(())
    }

    pub fn set_preferences(&mut self, preferences: &[f64]) -> Result<()> {
        if preferences.len() != self.n || preferences.iter().any(|p| !p.is_finite()) {
            return Err(invalid("need one finite preference per row"));
        }
        for (i, p) in preferences.iter().enumerate() {
            self.values[i * self.n + i] = *p;
        }
        Ok(())
    }

    /// Median of the off-diagonal entries (mean of the two middle values for
    /// an even count). `None` when `n < 2`.
    pub fn median_off_diagonal(&self) -> Option<f64> {
        let mut off: Vec<f64> = (0..self.n)
            .flat_map(|i| (0..self.n).filter(move |&k| k != i).map(move |k| (i, k)))
            .map(|(i, k)| self.get(i, k))
            .collect();
        if off.is_empty() {
            return None;
        }
        off.sort_by(f64::total_cmp);
        let m = off.len();
        Some(if m % 2 == 1 { off[m / 2] } else { 0.5 * (off[m / 2 - 1] + off[m / 2]) })
    }

    /// True when every off-diagonal entry is exactly zero.
    pub fn is_zero_off_diagonal(&self) -> bool {
        (0..self.n).all(|i| (0..self.n).all(|k| i == k || self.get(i, k) == 0.0))
    }
}

/// How the diagonal availability `A(k, k)` is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelfAvailability {
    /// Sum of positive responsibilities other points send to `k`.
    #[default]
    Standard,
    /// Maximum of those positive responsibilities.
    PaperMax,
}

/// Message-passing state for `n` points.
#[derive(Debug, Clone, PartialEq)]
pub struct ApState {
    n: usize,
    pub responsibility: Vec<f64>,
    pub availability: Vec<f64>,
    pub iteration: usize,
    pub stable_rounds: usize,
}

impl ApState {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            responsibility: vec![0.0; n * n],
            availability: vec![0.0; n * n],
            iteration: 0,
            stable_rounds: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn r(&self, i: usize, k: usize) -> f64 {
        self.responsibility[i * self.n + k]
    }

    pub fn a(&self, i: usize, k: usize) -> f64 {
        self.availability[i * self.n + k]
    }
}

fn check_damping(damping: f64) -> Result<()> {
    if !(0.0..1.0).contains(&damping) {
        return Err(invalid(format!("damping must be in [0, 1), got {damping}")));
    }
    Ok(())
}

/// One synchronous responsibility sweep:
/// `R(i,k) <- d*R(i,k) + (1-d)*(S(i,k) - max_{k' != k} [S(i,k') + A(i,k')])`.
pub fn responsibility_update(state: &mut ApState, sim: &SimilarityMatrix, damping: f64) -> Result<()> {
    check_damping(damping)?;
    let n = state.n;
    if sim.len() != n {
        return Err(invalid(format!("state has n={n}, similarity has n={}", sim.len())));
    }
    if n == 1 {
        state.responsibility[0] = damping * state.responsibility[0] + (1.0 - damping) * sim.get(0, 0);
        return Ok(());
    }
    for i in 0..n {
        // Largest and second largest of S(i,.) + A(i,.) with the argmax.
        let (mut best, mut second, mut best_k) = (f64::NEG_INFINITY, f64::NEG_INFINITY, 0);
        for k in 0..n {
            let v = sim.get(i, k) + state.a(i, k);
            if v > best {
                second = best;
                best = v;
                best_k = k;
            } else if v > second {
                second = v;
            }
        }
        for k in 0..n {
            let competitor = if k == best_k { second } else { best };
            let fresh = sim.get(i, k) - competitor;
            let slot = &mut state.responsibility[i * n + k];
            *slot = damping * *slot + (1.0 - damping) * fresh;
        }
    }
    Ok(())
}

/// One synchronous availability sweep. Off-diagonal entries get
/// `min(0, R(k,k) + sum_{i' not in {i,k}} max(0, R(i',k)))`.
pub fn availability_update(state: &mut ApState, damping: f64, mode: SelfAvailability) -> Result<()> {
    check_damping(damping)?;
    let n = state.n;
    if state.responsibility.len() != n * n || state.availability.len() != n * n {
        return Err(invalid("state matrices do not match n"));
    }
    let mut fresh = vec![0.0; n * n];
    for k in 0..n {
        // Column sum of positive responsibilities from others, in row order.
        let mut positive_sum = 0.0;
        let mut positive_max: f64 = 0.0;
        for i in 0..n {
            if i != k {
                let rp = state.r(i, k).max(0.0);
                positive_sum += rp;
                positive_max = positive_max.max(rp);
            }
        }
        let rkk = state.r(k, k);
        for i in 0..n {
            fresh[i * n + k] = if i == k {
                match mode {
                    SelfAvailability::Standard => positive_sum,
                    SelfAvailability::PaperMax => positive_max,
                }
            } else {
                let without_i = positive_sum - state.r(i, k).max(0.0);
                (rkk + without_i).min(0.0)
            };
        }
    }
    for (slot, new) in state.availability.iter_mut().zip(fresh) {
        *slot = damping * *slot + (1.0 - damping) * new;
    }
    Ok(())
}

/// Exemplars and the member-to-exemplar map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub exemplar_of: Vec<usize>,
    /// Sorted ascending.
    pub exemplars: Vec<usize>,
}

impl ClusterAssignment {
    /// All points in one group led by `leader`.
    pub fn single(n: usize, leader: usize) -> Self {
        Self {
            exemplar_of: vec![leader; n],
            exemplars: vec![leader],
        }
    }

    pub fn singletons(n: usize) -> Self {
        Self {
            exemplar_of: (0..n).collect(),
            exemplars: (0..n).collect(),
        }
    }

    /// Members of each exemplar's group, in exemplar order; each list is
    /// ascending and contains the exemplar.
    pub fn groups(&self) -> Vec<(usize, Vec<usize>)> {
        self.exemplars
            .iter()
            .map(|&e| {
                let members = (0..self.exemplar_of.len()).filter(|&i| self.exemplar_of[i] == e).collect();
                (e, members)
            })
            .collect()
    }

    /// `sum_i S(i, exemplar_of(i))`, exemplars contributing their preference.
    pub fn net_similarity(&self, sim: &SimilarityMatrix) -> f64 {
        self.exemplar_of.iter().enumerate().map(|(i, &e)| sim.get(i, e)).sum()
    }

    pub fn check_invariants(&self) -> Result<()> {
        let n = self.exemplar_of.len();
        if n > 0 && self.exemplars.is_empty() {
            return Err(invalid("no exemplars"));
        }
        if !self.exemplars.windows(2).all(|w| w[0] < w[1]) {
            return Err(invalid("exemplars not strictly sorted"));
        }
        for &e in &self.exemplars {
            if e >= n || self.exemplar_of[e] != e {
                return Err(invalid(format!("exemplar {e} does not lead itself")));
            }
        }
        for (i, e) in self.exemplar_of.iter().enumerate() {
            if self.exemplars.binary_search(e).is_err() {
                return Err(invalid(format!("point {i} assigned to non-exemplar {e}")));
            }
        }
        Ok(())
    }
}

/// Reads the assignment off `C = R + A`. Ties go to the lowest column; any
/// column that some row points at but which is not itself an exemplar is
/// promoted to exemplar.
pub fn decide(state: &ApState) -> ClusterAssignment {
    let n = state.n;
    let target: Vec<usize> = (0..n)
        .map(|i| {
            let mut best_k = 0;
            let mut best = f64::NEG_INFINITY;
            for k in 0..n {
                let c = state.r(i, k) + state.a(i, k);
                if c > best {
                    best = c;
                    best_k = k;
                }
            }
            best_k
        })
        .collect();
    let mut is_exemplar = vec![false; n];
    for (i, &t) in target.iter().enumerate() {
        is_exemplar[t] = true;
        if t == i {
            is_exemplar[i] = true;
        }
    }
    let exemplar_of = (0..n).map(|i| if is_exemplar[i] { i } else { target[i] }).collect();
    let exemplars = (0..n).filter(|&i| is_exemplar[i]).collect();
    ClusterAssignment { exemplar_of, exemplars }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ApConfig {
    pub damping: f64,
    pub stable_rounds_required: usize,
    pub max_iterations: usize,
    pub self_availability: SelfAvailability,
}

impl Default for ApConfig {
    fn default() -> Self {
        Self {
            damping: 0.5,
            stable_rounds_required: 10,
            max_iterations: 500,
            self_availability: SelfAvailability::Standard,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterOutcome {
    pub assignment: ClusterAssignment,
    pub iterations: usize,
    pub converged: bool,
}

/// Runs message passing until the assignment is unchanged for
/// `stable_rounds_required` consecutive sweeps, or `max_iterations` is hit
/// (then `converged` is false).
pub fn cluster(sim: &SimilarityMatrix, cfg: &ApConfig) -> Result<ClusterOutcome> {
    check_damping(cfg.damping)?;
    if cfg.stable_rounds_required == 0 || cfg.max_iterations == 0 {
        return Err(invalid("stable_rounds_required and max_iterations must be >= 1"));
    }
    let n = sim.len();
    if n == 0 {
        return Err(invalid("cannot cluster an empty similarity matrix"));
    }
    if n == 1 {
        return Ok(ClusterOutcome {
            assignment: ClusterAssignment::singletons(1),
            iterations: 1,
            converged: true,
        });
    }
    let mut state = ApState::new(n);
    let mut previous: Option<ClusterAssignment> = None;
    while state.iteration < cfg.max_iterations {
        responsibility_update(&mut state, sim, cfg.damping)?;
        availability_update(&mut state, cfg.damping, cfg.self_availability)?;
        state.iteration += 1;
        let current = decide(&state);
        if previous.as_ref() == Some(&current) {
            state.stable_rounds += 1;
        } else {
            state.stable_rounds = 0;
        }
        previous = Some(current);
        if state.stable_rounds >= cfg.stable_rounds_required {
            return Ok(ClusterOutcome {
                assignment: previous.expect("set above"),
                iterations: state.iteration,
                converged: true,
            });
        }
    }
    Ok(ClusterOutcome {
        assignment: previous.expect("at least one sweep ran"),
        iterations: state.iteration,
        converged: false,
    })
}
