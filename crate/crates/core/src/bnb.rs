//! Anytime depth-first branch-and-bound for MPE.
//!
//! The search walks an OR tree over the free variables. Every node is bounded
//! by a mini-bucket relaxation of the model conditioned on the node's
//! evidence; children whose bound falls below the incumbent are pruned. The
//! variable to branch on comes from a [`BranchPolicy`], the order in which
//! siblings are visited from a [`NodePolicy`].

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::bounds::{self, mini_bucket_dense, OrderHeuristic, DEFAULT_I_BOUND};
use crate::error::{Error, Result};
use crate::ext_real;
use crate::pgm::{Assignment, GraphicalModel};
use crate::sampling::{estimate_mode_values, GibbsConfig};

/// Nodes between two clock checks.
const CLOCK_INTERVAL: u64 = 64;

/// Candidates examined by the default strong-branching policy.
pub const STRONG_LITE_CANDIDATES: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    FeasibleTimeout,
    NoSolution,
}

/// Outcome of one solver run.
///
/// `assignment` is the full assignment (evidence included). Equality ignores
/// `wall_time_s`, which is not reproducible.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveRecord {
    pub assignment: Option<Assignment>,
    #[serde(with = "ext_real::scalar")]
    pub log_score: f64,
    pub wall_time_s: f64,
    pub nodes: u64,
    pub status: SolveStatus,
    /// `(nodes explored, global upper bound)`, non-increasing in the bound.
    #[serde(with = "ext_real::trace")]
    pub bound_trace: Vec<(u64, f64)>,
}

impl PartialEq for SolveRecord {
    fn eq(&self, other: &Self) -> bool {
        self.assignment == other.assignment
            && self.log_score == other.log_score
            && self.nodes == other.nodes
            && self.status == other.status
            && self.bound_trace == other.bound_trace
    }
}

impl SolveRecord {
    /// The part of `assignment` not fixed by `evidence`.
    pub fn completion(&self, evidence: &Assignment) -> Option<Assignment> {
        self.assignment
            .as_ref()
            .map(|a| a.iter().filter(|&(v, _)| !evidence.contains(v)).collect())
    }

    /// Drop of the global upper bound between the first and last trace entry.
    pub fn bound_improvement(&self) -> f64 {
        match (self.bound_trace.first(), self.bound_trace.last()) {
            (Some(&(_, first)), Some(&(_, last))) if first.is_finite() && last.is_finite() => {
                first - last
            }
            _ => 0.0,
        }
    }
}

/// What a policy sees about the node being expanded.
pub struct NodeContext<'a> {
    pub model: &'a GraphicalModel,
    /// Root evidence plus every pair fixed on the path to this node.
    pub evidence: &'a Assignment,
    /// Unassigned variables, ascending.
    pub free: &'a [usize],
    pub depth: usize,
    pub bound: f64,
    pub(crate) dense: &'a [Option<u8>],
    pub(crate) order: &'a [usize],
    pub(crate) i_bound: usize,
}

impl NodeContext<'_> {
    /// Mini-bucket bound of this node with `var = value` added.
    pub fn child_bound(&self, var: usize, value: u8) -> f64 {
        let mut dense = self.dense.to_vec();
        dense[var] = Some(value);
        mini_bucket_dense(self.model, &dense, self.i_bound, self.order)
            .expect("order covers free variables")
    }
}

/// A child about to be pushed, as seen by a [`NodePolicy`].
#[derive(Clone, Copy, Debug)]
pub struct ChildDescriptor {
    pub var: usize,
    pub value: u8,
    pub depth: usize,
    pub bound: f64,
    pub parent_priority: f64,
}

pub trait BranchPolicy {
    fn name(&self) -> &str;

    /// Candidate `(variable, first value)` pairs, best first. Only free
    /// variables may appear, and the list is non-empty when any exist.
    fn rank(&self, node: &NodeContext) -> Vec<(usize, u8)>;
}

pub trait NodePolicy {
    fn name(&self) -> &str;

    /// Higher priority is explored first among siblings.
    fn priority(&self, parent: &NodeContext, child: &ChildDescriptor) -> f64;

    /// Full assignment to try as the initial incumbent.
    fn warm_start(&self, _model: &GraphicalModel, _evidence: &Assignment) -> Option<Assignment> {
        None
    }
}

/// Visits the child with the larger bound first.
#[derive(Clone, Copy, Debug, Default)]
pub struct BoundFirst;

impl NodePolicy for BoundFirst {
    fn name(&self) -> &str {
        "dfs"
    }

    fn priority(&self, _parent: &NodeContext, child: &ChildDescriptor) -> f64 {
        child.bound
    }
}

/// Branches on the smallest free index, value 0 first.
#[derive(Clone, Copy, Debug, Default)]
pub struct FirstFree;

impl BranchPolicy for FirstFree {
    fn name(&self) -> &str {
        "first-free"
    }

    fn rank(&self, node: &NodeContext) -> Vec<(usize, u8)> {
        node.free.iter().map(|&v| (v, 0)).collect()
    }
}

/// `(score, best value)` from one-step look-ahead on `var` at `node`.
fn strong_score_at(node: &NodeContext, var: usize) -> (f64, u8) {
    let b0 = node.child_bound(var, 0);
    let b1 = node.child_bound(var, 1);
    let best_value = (b1 > b0) as u8;
    let best = b0.max(b1);
    let score = if node.bound == f64::NEG_INFINITY {
        0.0
    } else {
        (node.bound - best).max(0.0)
    };
    (score, best_value)
}

/// Bound improvement from fixing `var`, and the value with the larger child
/// bound (ties to 0).
///
/// The score is `parent − max(b₀, b₁)` clamped at zero; it is `inf` when both
/// children are infeasible under a finite parent bound.
pub fn strong_branching_score(
    model: &GraphicalModel,
    evidence: &Assignment,
    var: usize,
    i_bound: usize,
) -> Result<(f64, u8)> {
    evidence.validate(model.num_vars())?;
    if var >= model.num_vars() || evidence.contains(var) {
        return Err(Error::InvalidAssignment(format!(
            "variable {var} is not free"
        )));
    }
    let order = bounds::elimination_order(model, evidence, OrderHeuristic::MinFill).order;
    let dense = evidence.to_dense(model.num_vars());
    let free = model.free_vars(evidence);
    let bound = mini_bucket_dense(model, &dense, i_bound, &order)?;
    let node = NodeContext {
        model,
        evidence,
        free: &free,
        depth: 0,
        bound,
        dense: &dense,
        order: &order,
        i_bound,
    };
    Ok(strong_score_at(&node, var))
}

/// Full strong branching, or the "lite" variant restricted to the
/// highest-degree free variables.
#[derive(Clone, Debug)]
pub struct StrongBranching {
    candidates: Option<usize>,
    degrees: Vec<usize>,
}

impl StrongBranching {
    pub fn full(model: &GraphicalModel) -> Self {
        Self {
            candidates: None,
            degrees: model.primal_graph().degrees(),
        }
    }

    pub fn lite(model: &GraphicalModel) -> Self {
        Self {
            candidates: Some(STRONG_LITE_CANDIDATES),
            degrees: model.primal_graph().degrees(),
        }
    }

    /// Scored candidates at `node`, best first.
    pub fn scored(&self, node: &NodeContext) -> Vec<(usize, u8, f64)> {
        let mut pool = node.free.to_vec();
        if let Some(k) = self.candidates {
            pool.sort_by_key(|&v| (std::cmp::Reverse(self.degrees[v]), v));
            pool.truncate(k);
        }
        let mut scored: Vec<(usize, u8, f64)> = pool
            .into_iter()
            .map(|v| {
                let (s, b) = strong_score_at(node, v);
                (v, b, s)
            })
            .collect();
        scored.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
        scored
    }
}

impl BranchPolicy for StrongBranching {
    fn name(&self) -> &str {
        if self.candidates.is_some() {
            "strong-lite"
        } else {
            "strong"
        }
    }

    fn rank(&self, node: &NodeContext) -> Vec<(usize, u8)> {
        self.scored(node)
            .into_iter()
            .map(|(v, b, _)| (v, b))
            .collect()
    }
}

/// Free variables by descending degree in the primal graph with evidence
/// removed (ties by ascending index), each paired with its Gibbs-estimated
/// most likely value.
pub fn max_degree_policy(
    model: &GraphicalModel,
    evidence: &Assignment,
    gibbs: &GibbsConfig,
    samples: usize,
) -> Result<Vec<(usize, u8)>> {
    let modes = estimate_mode_values(model, evidence, samples, gibbs)?;
    let degrees = model.condition(evidence).primal_graph().degrees();
    let mut free = model.free_vars(evidence);
    free.sort_by_key(|&v| (std::cmp::Reverse(degrees[v]), v));
    Ok(free
        .into_iter()
        .map(|v| (v, modes.get(v).unwrap_or(0)))
        .collect())
}

/// Samples used by default for mode estimation in the max-degree baseline.
pub const MODE_SAMPLES: usize = 200;

/// [`max_degree_policy`] computed once at the root and filtered at each node.
#[derive(Clone, Debug)]
pub struct MaxDegreeBranching {
    ranking: Vec<(usize, u8)>,
}

impl MaxDegreeBranching {
    pub fn new(model: &GraphicalModel, evidence: &Assignment, gibbs: &GibbsConfig) -> Result<Self> {
        Ok(Self {
            ranking: max_degree_policy(model, evidence, gibbs, MODE_SAMPLES)?,
        })
    }
}

impl BranchPolicy for MaxDegreeBranching {
    fn name(&self) -> &str {
        "max-degree"
    }

    fn rank(&self, node: &NodeContext) -> Vec<(usize, u8)> {
        let ranked: Vec<(usize, u8)> = self
            .ranking
            .iter()
            .copied()
            .filter(|&(v, _)| node.dense[v].is_none())
            .collect();
        if ranked.is_empty() {
            FirstFree.rank(node)
        } else {
            ranked
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolverOptions {
    /// `None` runs until the tree is exhausted.
    pub budget: Option<Duration>,
    pub i_bound: usize,
    pub order: OrderHeuristic,
    /// With pruning off every bound is `+inf` and the full tree is walked.
    pub prune: bool,
    /// Seed the incumbent from Gibbs-estimated modes.
    pub seed_incumbent: bool,
    /// Extra full assignment tried as the initial incumbent.
    pub warm_start: Option<Assignment>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            budget: None,
            i_bound: DEFAULT_I_BOUND,
            order: OrderHeuristic::MinFill,
            prune: true,
            seed_incumbent: true,
            warm_start: None,
        }
    }
}

impl SolverOptions {
    pub fn with_budget(budget: Duration) -> Self {
        Self {
            budget: Some(budget),
            ..Self::default()
        }
    }
}

struct Node {
    dense: Vec<Option<u8>>,
    depth: usize,
    bound: f64,
    priority: f64,
}

struct Incumbent {
    score: f64,
    values: Option<Vec<u8>>,
}

impl Incumbent {
    fn offer(&mut self, model: &GraphicalModel, values: Vec<u8>) -> bool {
        let score = model.log_score_dense(&values);
        if score > self.score {
            self.score = score;
            self.values = Some(values);
            true
        } else {
            false
        }
    }

    fn slack(&self) -> f64 {
        1e-12 * self.score.abs().max(1.0)
    }

    /// A node is dropped when it cannot beat the incumbent. Ties survive.
    fn prunes(&self, bound: f64) -> bool {
        bound == f64::NEG_INFINITY || bound < self.score - self.slack()
    }
}

fn global_upper_bound(incumbent: f64, stack: &[Node]) -> f64 {
    stack.iter().map(|n| n.bound).fold(incumbent, f64::max)
}

fn consistent_full(
    model: &GraphicalModel,
    evidence: &[Option<u8>],
    a: &Assignment,
) -> Option<Vec<u8>> {
    let full = a.to_full(model.num_vars()).ok()?;
    evidence
        .iter()
        .zip(&full)
        .all(|(e, &x)| e.is_none_or(|e| e == x))
        .then_some(full)
}

/// Solves MPE for `evidence` with depth-first branch-and-bound.
///
/// Runs until the tree is exhausted (`Optimal` or `NoSolution`) or the budget
/// elapses (`FeasibleTimeout`, carrying the best incumbent found).
pub fn solve_mpe(
    model: &GraphicalModel,
    evidence: &Assignment,
    opts: &SolverOptions,
    branch: &dyn BranchPolicy,
    node_sel: &dyn NodePolicy,
) -> Result<SolveRecord> {
    let start = Instant::now();
    evidence.validate(model.num_vars())?;
    if opts.budget.is_some_and(|b| b.is_zero()) {
        return Err(Error::Config("solver budget must be positive".into()));
    }
    if opts.i_bound == 0 {
        return Err(Error::Config("i-bound must be at least 1".into()));
    }
    let nv = model.num_vars();
    let root = evidence.to_dense(nv);
    let order = bounds::elimination_order(model, evidence, opts.order).order;
    let bound_of = |dense: &[Option<u8>]| -> f64 {
        if opts.prune {
            mini_bucket_dense(model, dense, opts.i_bound, &order)
                .expect("order covers free variables")
        } else {
            f64::INFINITY
        }
    };

    let mut inc = Incumbent {
        score: f64::NEG_INFINITY,
        values: None,
    };
    if opts.seed_incumbent {
        let cfg = GibbsConfig {
            burn_in: 8,
            thinning: 1,
            seed: 0,
        };
        let modes = estimate_mode_values(model, evidence, 16, &cfg)?;
        if let Some(full) = consistent_full(model, &root, &evidence.union(&modes)) {
            inc.offer(model, full);
        }
    }
    for start_point in [
        opts.warm_start.clone(),
        node_sel.warm_start(model, evidence),
    ]
    .into_iter()
    .flatten()
    {
        if let Some(full) = consistent_full(model, &root, &start_point) {
            inc.offer(model, full);
        }
    }

    let mut stack = vec![Node {
        bound: bound_of(&root),
        dense: root,
        depth: 0,
        priority: 0.0,
    }];
    let mut nodes: u64 = 0;
    let mut trace: Vec<(u64, f64)> = Vec::new();
    let record_bound = |nodes: u64, ub: f64, trace: &mut Vec<(u64, f64)>| {
        if trace.last().is_none_or(|&(_, last)| ub < last) {
            trace.push((nodes, ub));
        }
    };
    record_bound(0, global_upper_bound(inc.score, &stack), &mut trace);

    let mut timed_out = false;
    while let Some(node) = stack.pop() {
        if nodes > 0 && nodes.is_multiple_of(CLOCK_INTERVAL) {
            // The popped node is still open.
            let ub = global_upper_bound(inc.score, &stack).max(node.bound);
            record_bound(nodes, ub, &mut trace);
            if opts.budget.is_some_and(|b| start.elapsed() >= b) {
                stack.push(node);
                timed_out = true;
                break;
            }
        }
        if opts.prune && inc.prunes(node.bound) {
            continue;
        }
        nodes += 1;
        let free: Vec<usize> = (0..nv).filter(|&v| node.dense[v].is_none()).collect();
        if free.is_empty() {
            let values: Vec<u8> = node
                .dense
                .iter()
                .map(|v| v.expect("leaf is full"))
                .collect();
            if inc.offer(model, values) {
                record_bound(nodes, global_upper_bound(inc.score, &stack), &mut trace);
            }
            continue;
        }
        let node_evidence = Assignment::from_partial_dense(&node.dense);
        let ctx = NodeContext {
            model,
            evidence: &node_evidence,
            free: &free,
            depth: node.depth,
            bound: node.bound,
            dense: &node.dense,
            order: &order,
            i_bound: opts.i_bound,
        };
        let ranked = branch.rank(&ctx);
        let (var, first) = match ranked.first() {
            Some(&(v, b)) if node.dense[v].is_none() => (v, b.min(1)),
            _ => {
                debug_assert!(
                    false,
                    "branch policy {} returned no free variable",
                    branch.name()
                );
                (free[0], 0)
            }
        };
        let mut children: Vec<Node> = Vec::with_capacity(2);
        for value in [first, 1 - first] {
            let mut dense = node.dense.clone();
            dense[var] = Some(value);
            let bound = bound_of(&dense).min(node.bound);
            if opts.prune && inc.prunes(bound) {
                continue;
            }
            let desc = ChildDescriptor {
                var,
                value,
                depth: node.depth + 1,
                bound,
                parent_priority: node.priority,
            };
            let priority = node_sel.priority(&ctx, &desc);
            children.push(Node {
                dense,
                depth: node.depth + 1,
                bound,
                priority,
            });
        }
        // Stable sort keeps the branch policy's value first on ties.
        children.sort_by(|a, b| b.priority.total_cmp(&a.priority));
        stack.extend(children.into_iter().rev());
    }

    let status = if timed_out {
        SolveStatus::FeasibleTimeout
    } else if inc.values.is_some() {
        SolveStatus::Optimal
    } else {
        SolveStatus::NoSolution
    };
    let final_bound = if timed_out {
        global_upper_bound(inc.score, &stack)
    } else {
        inc.score
    };
    record_bound(nodes, final_bound, &mut trace);
    Ok(SolveRecord {
        assignment: inc.values.as_deref().map(Assignment::from_dense),
        log_score: inc.score,
        wall_time_s: start.elapsed().as_secs_f64(),
        nodes,
        status,
        bound_trace: trace,
    })
}
