//! Slave 1: extracts linear and quadratic structure from the master's
//! estimator by probing basis directions, solves the induced integer programs
//! under the hard pair-exclusion constraints, and diversifies the two solver
//! elites with a beta perturber.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};
use crate::types::{binarize_top_k, ActionVector, ConstraintSet};

/// Anything that can evaluate an arbitrary real input vector; the structure
/// extractors probe off-manifold points (basis vectors, the origin).
pub trait ValueOracle {
    fn eval(&self, x: &[f64]) -> f64;
}

impl<F: Fn(&[f64]) -> f64> ValueOracle for F {
    fn eval(&self, x: &[f64]) -> f64 {
        self(x)
    }
}

/// Per-arm value estimates from unit-basis probes.
#[derive(Debug, Clone)]
pub struct LinearSurrogate {
    pub b: Vec<f64>,
}

/// Estimated symmetric quadratic structure plus the origin output.
#[derive(Debug, Clone)]
pub struct QuadraticSurrogate {
    pub q: Vec<Vec<f64>>,
    pub e0: f64,
}

/// `b_i = oracle(e_i)` over the L unit basis vectors.
pub fn extract_first_order(oracle: &dyn ValueOracle, l: usize) -> LinearSurrogate {
    let mut x = vec![0.0; l];
    let mut b = Vec::with_capacity(l);
    for i in 0..l {
        x[i] = 1.0;
        b.push(oracle.eval(&x));
        x[i] = 0.0;
    }
    LinearSurrogate { b }
}

/// Recover the quadratic term of an approximately quadratic oracle from
/// pairwise probes at `(e_i + e_j)/sqrt(2)`, diagonal probes at
/// `sqrt(2) * e_i`, and the origin output. Exact whenever the oracle is
/// exactly quadratic with a symmetric quadratic term.
pub fn extract_second_order(oracle: &dyn ValueOracle, linear: &LinearSurrogate) -> QuadraticSurrogate {
    let l = linear.b.len();
    let sqrt2 = std::f64::consts::SQRT_2;
    let e0 = oracle.eval(&vec![0.0; l]);
    let mut probe = vec![0.0; l];
    // Diagonal probes o_ii at sqrt(2) * e_i.
    let mut o_diag = vec![0.0; l];
    for i in 0..l {
        probe[i] = sqrt2;
        o_diag[i] = oracle.eval(&probe);
        probe[i] = 0.0;
    }
    let mut q = vec![vec![0.0; l]; l];
    for i in 0..l {
        q[i][i] = (o_diag[i] - sqrt2 * (linear.b[i] - e0) - e0) / (2.0 - sqrt2);
    }
    let inv_sqrt2 = 1.0 / sqrt2;
    for i in 0..l {
        for j in (i + 1)..l {
            probe[i] = inv_sqrt2;
            probe[j] = inv_sqrt2;
            let o_ij = oracle.eval(&probe);
            probe[i] = 0.0;
            probe[j] = 0.0;
            let v = o_ij + (sqrt2 / 4.0) * (o_diag[i] + o_diag[j])
                - ((1.0 + sqrt2) / 2.0) * (linear.b[i] + linear.b[j])
                + (sqrt2 / 2.0) * e0;
            q[i][j] = v;
            q[j][i] = v;
        }
    }
    QuadraticSurrogate { q, e0 }
}

/// The two integer-program shapes this sampler solves.
#[derive(Debug, Clone, Copy)]
pub enum IpObjective<'a> {
    Linear(&'a LinearSurrogate),
    Quadratic(&'a QuadraticSurrogate),
}

impl IpObjective<'_> {
    pub fn l(&self) -> usize {
        match self {
            IpObjective::Linear(s) => s.b.len(),
            IpObjective::Quadratic(s) => s.q.len(),
        }
    }

    /// Canonical objective value of a selection, used by both the solver and
    /// the test oracles so values compare bit-for-bit.
    pub fn value_of(&self, selected: &[usize]) -> f64 {
        match self {
            IpObjective::Linear(s) => selected.iter().map(|&i| s.b[i]).sum(),
            IpObjective::Quadratic(s) => {
                let mut total = 0.0;
                for &i in selected {
                    for &j in selected {
                        total += s.q[i][j];
                    }
                }
                total
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMode {
    /// Branch and bound, exact. Used up to L = 40 and by the test oracles.
    Exact,
    /// Simulated annealing with feasibility repair.
    Heuristic,
    /// Exact up to L = 40, heuristic above.
    Auto,
}

#[derive(Debug, Clone)]
pub struct IpSolution {
    pub action: ActionVector,
    pub value: f64,
    /// False when the heuristic path produced the solution.
    pub exact: bool,
}

const EXACT_L_LIMIT: usize = 40;

struct ConflictGraph {
    neighbors: Vec<Vec<usize>>,
}

impl ConflictGraph {
    fn new(l: usize, constraints: &ConstraintSet) -> Self {
        let mut neighbors = vec![Vec::new(); l];
        for &(i, j) in constraints.pairs() {
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        Self { neighbors }
    }

    fn conflicts_with(&self, arm: usize, selected: &[bool]) -> bool {
        self.neighbors[arm].iter().any(|&n| selected[n])
    }

    /// Greedy independent set by ascending conflict degree.
    fn greedy_independent_set(&self, k: usize) -> Vec<usize> {
        let l = self.neighbors.len();
        let mut order: Vec<usize> = (0..l).collect();
        order.sort_by_key(|&i| (self.neighbors[i].len(), i));
        let mut selected = vec![false; l];
        let mut out = Vec::new();
        for i in order {
            if out.len() == k {
                break;
            }
            if !self.conflicts_with(i, &selected) {
                selected[i] = true;
                out.push(i);
            }
        }
        out
    }
}

/// Maximize the objective over selections of exactly `k` arms that cover no
/// forbidden pair.
pub fn solve_ip(
    objective: IpObjective<'_>,
    constraints: &ConstraintSet,
    k: usize,
    mode: SolveMode,
    rng: &mut ChaCha8Rng,
) -> Result<IpSolution> {
    let l = objective.l();
    if k == 0 || k > l {
        return Err(Error::InvalidInput(format!("need 1 <= K <= L, got K={k}, L={l}")));
    }
    let graph = ConflictGraph::new(l, constraints);
    let exact = match mode {
        SolveMode::Exact => true,
        SolveMode::Heuristic => false,
        SolveMode::Auto => l <= EXACT_L_LIMIT,
    };
    if exact {
        let selected = branch_and_bound(&objective, &graph, k, l)?;
        let value = objective.value_of(&selected);
        Ok(IpSolution {
            action: ActionVector::from_indices(&selected, l)?,
            value,
            exact: true,
        })
    } else {
        // The greedy feasibility gate is the only check in heuristic mode.
        let start = graph.greedy_independent_set(k);
        if start.len() < k {
            return Err(Error::Infeasible(format!(
                "greedy independent set reached only {} of {k} arms",
                start.len()
            )));
        }
        let selected = simulated_annealing(&objective, &graph, start, l, rng);
        let value = objective.value_of(&selected);
        Ok(IpSolution {
            action: ActionVector::from_indices(&selected, l)?,
            value,
            exact: false,
        })
    }
}

/// Per-arm optimistic completion weight: the arm's own objective ceiling.
/// For the quadratic shape this is the clipped-positive row sum; any
/// selection containing arm i gains at most `sum_j max(Q_ij, 0)` from row i,
/// so summing the chosen rows' weights bounds the objective from above.
fn arm_bound_weights(objective: &IpObjective<'_>, l: usize) -> Vec<f64> {
    match objective {
        IpObjective::Linear(s) => s.b.clone(),
        IpObjective::Quadratic(s) => (0..l)
            .map(|i| s.q[i].iter().map(|v| v.max(0.0)).sum())
            .collect(),
    }
}

struct BbContext<'a> {
    order: Vec<usize>,
    weights: Vec<f64>,
    graph: &'a ConflictGraph,
    objective: &'a IpObjective<'a>,
    k: usize,
}

fn branch_and_bound(
    objective: &IpObjective<'_>,
    graph: &ConflictGraph,
    k: usize,
    l: usize,
) -> Result<Vec<usize>> {
    let weights = arm_bound_weights(objective, l);
    // Explore promising arms first.
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &b| {
        weights[b]
            .partial_cmp(&weights[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let ctx = BbContext {
        order,
        weights,
        graph,
        objective,
        k,
    };
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    let mut selected_flags = vec![false; l];
    dfs(&ctx, 0, &mut chosen, &mut selected_flags, &mut best);
    match best {
        Some((_, sel)) => {
            let mut sel = sel;
            sel.sort_unstable();
            Ok(sel)
        }
        None => Err(Error::Infeasible(format!(
            "no feasible selection of {k} arms under {l}-arm conflict graph"
        ))),
    }
}

/// Upper bound from a node: bound weights of the chosen arms plus the largest
/// remaining eligible bound weights needed to complete the selection.
/// None marks a dead branch that cannot reach k arms.
fn node_bound(ctx: &BbContext<'_>, pos: usize, chosen: &[usize], selected_flags: &[bool]) -> Option<f64> {
    let need = ctx.k - chosen.len();
    let mut top: Vec<f64> = Vec::new();
    for &arm in &ctx.order[pos..] {
        if !ctx.graph.conflicts_with(arm, selected_flags) {
            top.push(ctx.weights[arm]);
        }
    }
    if top.len() < need {
        return None;
    }
    top.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let completion: f64 = top.iter().take(need).sum();
    let base: f64 = chosen.iter().map(|&i| ctx.weights[i]).sum();
    Some(base + completion)
}

fn dfs(
    ctx: &BbContext<'_>,
    pos: usize,
    chosen: &mut Vec<usize>,
    selected_flags: &mut Vec<bool>,
    best: &mut Option<(f64, Vec<usize>)>,
) {
    if chosen.len() == ctx.k {
        let value = ctx.objective.value_of(chosen);
        if best.as_ref().is_none_or(|(bv, _)| value > *bv) {
            *best = Some((value, chosen.clone()));
        }
        return;
    }
    if pos >= ctx.order.len() {
        return;
    }
    match node_bound(ctx, pos, chosen, selected_flags) {
        None => return,
        Some(bound) => {
            if let Some((bv, _)) = best {
                if bound <= *bv {
                    return;
                }
            }
        }
    }
    let arm = ctx.order[pos];
    if !ctx.graph.conflicts_with(arm, selected_flags) {
        chosen.push(arm);
        selected_flags[arm] = true;
        dfs(ctx, pos + 1, chosen, selected_flags, best);
        selected_flags[arm] = false;
        chosen.pop();
    }
    dfs(ctx, pos + 1, chosen, selected_flags, best);
}

fn simulated_annealing(
    objective: &IpObjective<'_>,
    graph: &ConflictGraph,
    start: Vec<usize>,
    l: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let mut selected_flags = vec![false; l];
    for &i in &start {
        selected_flags[i] = true;
    }
    let mut current = start;
    let mut current_value = objective.value_of(&current);
    let mut best = current.clone();
    let mut best_value = current_value;
    let mut temp: f64 = 1.0;
    let iters = 4000.max(40 * l);
    for _ in 0..iters {
        temp *= 0.999;
        let out_pos = rng.random_range(0..current.len());
        let candidate = rng.random_range(0..l);
        if selected_flags[candidate] {
            continue;
        }
        let removed = current[out_pos];
        selected_flags[removed] = false;
        if graph.conflicts_with(candidate, &selected_flags) {
            // Repair by rejection: the swap would cover a forbidden pair.
            selected_flags[removed] = true;
            continue;
        }
        current[out_pos] = candidate;
        selected_flags[candidate] = true;
        let value = objective.value_of(&current);
        let delta = value - current_value;
        if delta >= 0.0 || rng.random::<f64>() < (delta / temp.max(1e-9)).exp() {
            current_value = value;
            if value > best_value {
                best_value = value;
                best = current.clone();
            }
        } else {
            selected_flags[candidate] = false;
            current[out_pos] = removed;
            selected_flags[removed] = true;
        }
    }
    best.sort_unstable();
    best
}

/// Beta-perturbed variants of an elite: clip bits into `[eps0, 1-eps0]`,
/// resample each component from `Beta(v, 1-v)`, and rebinarize.
pub fn beta_perturb(
    elite: &ActionVector,
    eps0: f64,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ActionVector>> {
    if !(eps0 > 0.0 && eps0 < 0.5) {
        return Err(Error::InvalidInput(format!(
            "eps0 must lie in (0, 0.5), got {eps0}"
        )));
    }
    let k = elite.k();
    let base: Vec<f64> = elite
        .to_reals()
        .into_iter()
        .map(|v| v.clamp(eps0, 1.0 - eps0))
        .collect();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut perturbed = Vec::with_capacity(base.len());
        for &v in &base {
            let draw = Beta::new(v, 1.0 - v)
                .map_err(|e| Error::Internal(format!("beta({v}, {}): {e}", 1.0 - v)))?
                .sample(rng);
            perturbed.push(draw);
        }
        out.push(binarize_top_k(&perturbed, k)?);
    }
    Ok(out)
}

/// Whether the conflict graph admits a greedy independent selection of size
/// `k`; the experiment loop refuses instances that fail this gate.
pub fn feasible_by_greedy(l: usize, constraints: &ConstraintSet, k: usize) -> bool {
    ConflictGraph::new(l, constraints)
        .greedy_independent_set(k)
        .len()
        >= k
}
