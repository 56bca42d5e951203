//! Shared domain types and the scoring arithmetic every other module builds on:
//! binary super-arm actions, feature matrices, diversity constraint sets derived
//! from normalized-edit-distance thresholding, and the composite score.

use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, Result};

/// A super-arm decision: binary vector of length `L` with exactly `K` ones.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ActionVector {
    bits: Vec<bool>,
    k: usize,
}

impl ActionVector {
    /// Build from a bit vector, validating the exact-`K` cardinality.
    pub fn new(bits: Vec<bool>, k: usize) -> Result<Self> {
        let ones = bits.iter().filter(|b| **b).count();
        if k == 0 || k > bits.len() {
            return Err(Error::InvalidInput(format!(
                "need 1 <= K <= L, got K={k}, L={}",
                bits.len()
            )));
        }
        if ones != k {
            return Err(Error::InvalidInput(format!(
                "action has {ones} ones, expected {k}"
            )));
        }
        Ok(Self { bits, k })
    }

    /// Build from the set of selected arm indices.
    pub fn from_indices(indices: &[usize], l: usize) -> Result<Self> {
        let mut bits = vec![false; l];
        for &i in indices {
            if i >= l {
                return Err(Error::InvalidInput(format!("arm index {i} out of range {l}")));
            }
            if bits[i] {
                return Err(Error::InvalidInput(format!("duplicate arm index {i}")));
            }
            bits[i] = true;
        }
        Self::new(bits, indices.len())
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Indices of the selected arms, ascending.
    pub fn selected(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, b)| b.then_some(i))
            .collect()
    }

    /// The action as a 0/1 real vector.
    pub fn to_reals(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    /// The action scaled to unit Euclidean norm (all estimator inputs are normalized).
    pub fn normalized(&self) -> Vec<f64> {
        let inv = 1.0 / (self.k as f64).sqrt();
        self.bits.iter().map(|&b| if b { inv } else { 0.0 }).collect()
    }
}

impl fmt::Display for ActionVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.bits {
            write!(f, "{}", if *b { '1' } else { '0' })?;
        }
        Ok(())
    }
}

/// Identifies which slave produced a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SamplerId {
    Solver,
    Wolpertinger,
    G2anet,
    Cem,
    Random,
    Tlbo,
}

impl SamplerId {
    pub const ALL: [SamplerId; 6] = [
        SamplerId::Solver,
        SamplerId::Wolpertinger,
        SamplerId::G2anet,
        SamplerId::Cem,
        SamplerId::Random,
        SamplerId::Tlbo,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|s| *s == self).unwrap()
    }

    pub fn name(self) -> &'static str {
        match self {
            SamplerId::Solver => "solver",
            SamplerId::Wolpertinger => "wolpertinger",
            SamplerId::G2anet => "g2anet",
            SamplerId::Cem => "cem",
            SamplerId::Random => "random",
            SamplerId::Tlbo => "tlbo",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|id| id.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown sampler `{s}`")))
    }
}

/// A candidate action a slave submits to the master, with provenance.
#[derive(Debug, Clone)]
pub struct EliteSample {
    pub action: ActionVector,
    pub sampler_id: SamplerId,
    pub surrogate_score: f64,
    pub violation_rate: f64,
}

/// Per-item feature rows, all of dimension `d`.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    rows: Vec<Vec<f64>>,
    d: usize,
}

impl FeatureMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let d = rows.first().map(|r| r.len()).unwrap_or(0);
        if d == 0 {
            return Err(Error::InvalidInput("feature matrix needs d >= 1".into()));
        }
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(Error::InvalidInput(format!(
                    "row {i} has dimension {}, expected {d}",
                    r.len()
                )));
            }
        }
        Ok(Self { rows, d })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

/// Set of forbidden arm pairs `(i, j)`, `i < j`.
#[derive(Debug, Clone, Default)]
pub struct ConstraintSet {
    pairs: Vec<(usize, usize)>,
}

impl ConstraintSet {
    pub fn new(pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for (a, b) in pairs {
            if a == b {
                return Err(Error::InvalidInput(format!("self-pair ({a},{a})")));
            }
            let p = (a.min(b), a.max(b));
            seen.insert(p);
        }
        Ok(Self {
            pairs: seen.into_iter().collect(),
        })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Number of constraints, `M`.
    pub fn m(&self) -> usize {
        self.pairs.len()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        let p = (i.min(j), i.max(j));
        self.pairs.binary_search(&p).is_ok()
    }
}

/// Experiment-level knobs shared across modules.
#[derive(Debug, Clone)]
pub struct Hyperparameters {
    pub l: usize,
    pub k: usize,
    /// Reward-constraint trade-off coefficient in the composite score.
    pub lambda: f64,
    /// NED threshold under which an arm pair becomes a forbidden pair.
    pub tau: f64,
    /// Clip width for the beta perturber.
    pub epsilon0: f64,
    /// Elite fraction for the evolutionary sampler.
    pub rho: f64,
    /// Slave update period in rounds.
    pub f_in: usize,
    /// Shared-buffer capacity and epoch length for state recomputation.
    pub length_epoch: usize,
    /// Demonstration window (rounds) for the co-training store.
    pub l2_window: usize,
    /// Elite samples collected per round.
    pub n_es: usize,
    /// Replay-buffer cluster count.
    pub cluster_count: usize,
    pub seed: u64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            l: 300,
            k: 20,
            lambda: 5.0,
            tau: 0.5,
            epsilon0: 0.05,
            rho: 0.1,
            f_in: 20,
            length_epoch: 20,
            l2_window: 100,
            n_es: 10,
            cluster_count: 20,
            seed: 0,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > self.l {
            return Err(Error::Config(format!("need 1 <= K <= L, got K={} L={}", self.k, self.l)));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.epsilon0 > 0.0 && self.epsilon0 < 0.5) {
            return Err(Error::Config(format!(
                "epsilon0 must lie in (0, 0.5), got {}",
                self.epsilon0
            )));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::Config(format!("rho must lie in (0, 1], got {}", self.rho)));
        }
        if self.f_in == 0 {
            return Err(Error::Config("f_in must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau must lie in [0, 1], got {}", self.tau)));
        }
        if self.length_epoch == 0 || self.l2_window == 0 || self.n_es == 0 || self.cluster_count == 0 {
            return Err(Error::Config(
                "length_epoch, l2_window, n_es and cluster_count must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Normalized edit distance between two nonnegative numeric vectors:
/// `sum(|u_i - v_i|) / (sum(u_i) + sum(v_i))`.
pub fn ned(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::InvalidInput(format!(
            "ned: dimension mismatch {} vs {}",
            u.len(),
            v.len()
        )));
    }
    let num: f64 = u.iter().zip(v).map(|(a, b)| (a - b).abs()).sum();
    let den: f64 = u.iter().sum::<f64>() + v.iter().sum::<f64>();
    if den == 0.0 {
        return Err(Error::DegenerateInput(
            "ned: both vectors sum to zero".into(),
        ));
    }
    Ok(num / den)
}

/// All pairs `(i, j)`, `i < j`, whose feature NED falls strictly below `tau`.
pub fn build_constraints(features: &FeatureMatrix, tau: f64) -> Result<ConstraintSet> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidInput(format!("tau must lie in [0, 1], got {tau}")));
    }
    let l = features.len();
    let mut pairs = Vec::new();
    for i in 0..l {
        for j in (i + 1)..l {
            if ned(features.row(i), features.row(j))? < tau {
                pairs.push((i, j));
            }
        }
    }
    ConstraintSet::new(pairs)
}

/// Fraction of forbidden pairs fully selected by `action`; 0 when `M = 0`.
pub fn violation_rate(action: &ActionVector, constraints: &ConstraintSet) -> f64 {
    if constraints.m() == 0 {
        return 0.0;
    }
    let violated = constraints
        .pairs()
        .iter()
        .filter(|(i, j)| action.get(*i) && action.get(*j))
        .count();
    violated as f64 / constraints.m() as f64
}

/// Set the `K` largest components to one, the rest to zero.
/// Ties break toward the lowest index.
pub fn binarize_top_k(values: &[f64], k: usize) -> Result<ActionVector> {
    if k == 0 || k > values.len() {
        return Err(Error::InvalidInput(format!(
            "binarize_top_k: need 1 <= K <= L, got K={k}, L={}",
            values.len()
        )));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    // Descending by value; equal values keep ascending index order.
    order.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut bits = vec![false; values.len()];
    for &i in order.iter().take(k) {
        bits[i] = true;
    }
    ActionVector::new(bits, k)
}

/// Overall evaluation of a sample: optimistic estimate minus the weighted
/// violation rate.
pub fn composite_score(surrogate: f64, violation: f64, lambda: f64) -> f64 {
    surrogate - lambda * violation
}
