//! Elimination orders, exact bucket elimination and mini-bucket upper bounds.
//!
//! All routines work on the model conditioned on the given evidence: factors
//! are restricted first and instantiated factors fold into a constant.
//! Max-elimination runs in log-space, so combining factors is addition and
//! eliminating a variable is a pointwise max.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pgm::{Assignment, GraphicalModel, LogPotential, PrimalGraph};

/// Induced width above which exact bucket elimination refuses to run.
pub const EXACT_WIDTH_LIMIT: usize = 20;

/// Default mini-bucket i-bound.
pub const DEFAULT_I_BOUND: usize = 10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrderHeuristic {
    #[default]
    MinFill,
    MinDegree,
}

impl std::str::FromStr for OrderHeuristic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min-fill" => Ok(OrderHeuristic::MinFill),
            "min-degree" => Ok(OrderHeuristic::MinDegree),
            other => Err(Error::Config(format!(
                "unknown elimination order {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EliminationOrder {
    pub order: Vec<usize>,
    pub induced_width: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    pub upper_bound: f64,
    pub i_bound: usize,
    pub order_used: EliminationOrder,
}

fn induced_subgraph(graph: &PrimalGraph, vertices: &[usize]) -> Vec<BTreeSet<usize>> {
    let keep: BTreeSet<usize> = vertices.iter().copied().collect();
    (0..graph.num_vertices())
        .map(|v| {
            if keep.contains(&v) {
                graph.neighbors(v).intersection(&keep).copied().collect()
            } else {
                BTreeSet::new()
            }
        })
        .collect()
}

fn eliminate_vertex(adj: &mut [BTreeSet<usize>], v: usize) -> usize {
    let nb: Vec<usize> = std::mem::take(&mut adj[v]).into_iter().collect();
    for (i, &a) in nb.iter().enumerate() {
        adj[a].remove(&v);
        for &b in &nb[i + 1..] {
            adj[a].insert(b);
            adj[b].insert(a);
        }
    }
    nb.len()
}

fn fill_in(adj: &[BTreeSet<usize>], v: usize) -> usize {
    let nb: Vec<usize> = adj[v].iter().copied().collect();
    let mut missing = 0;
    for (i, &a) in nb.iter().enumerate() {
        for &b in &nb[i + 1..] {
            if !adj[a].contains(&b) {
                missing += 1;
            }
        }
    }
    missing
}

fn greedy_order(
    graph: &PrimalGraph,
    free: &[usize],
    heuristic: OrderHeuristic,
) -> EliminationOrder {
    let mut adj = induced_subgraph(graph, free);
    let mut remaining: BTreeSet<usize> = free.iter().copied().collect();
    let mut order = Vec::with_capacity(remaining.len());
    let mut width = 0;
    while !remaining.is_empty() {
        let pick = remaining
            .iter()
            .copied()
            .min_by_key(|&v| {
                let fill = match heuristic {
                    OrderHeuristic::MinFill => fill_in(&adj, v),
                    OrderHeuristic::MinDegree => 0,
                };
                (fill, adj[v].len(), v)
            })
            .expect("non-empty");
        width = width.max(eliminate_vertex(&mut adj, pick));
        remaining.remove(&pick);
        order.push(pick);
    }
    EliminationOrder {
        order,
        induced_width: width,
    }
}

/// Greedy min-fill order over `free`; ties by degree, then index.
pub fn min_fill_order(graph: &PrimalGraph, free: &[usize]) -> EliminationOrder {
    greedy_order(graph, free, OrderHeuristic::MinFill)
}

/// Greedy min-degree order over `free`; ties by index.
pub fn min_degree_order(graph: &PrimalGraph, free: &[usize]) -> EliminationOrder {
    greedy_order(graph, free, OrderHeuristic::MinDegree)
}

/// Induced width of eliminating `order` in the subgraph it spans.
pub fn induced_width(graph: &PrimalGraph, order: &[usize]) -> usize {
    let mut adj = induced_subgraph(graph, order);
    order
        .iter()
        .map(|&v| eliminate_vertex(&mut adj, v))
        .max()
        .unwrap_or(0)
}

/// Order for the free variables of `model` given `evidence`.
pub fn elimination_order(
    model: &GraphicalModel,
    evidence: &Assignment,
    heuristic: OrderHeuristic,
) -> EliminationOrder {
    let free = model.free_vars(evidence);
    greedy_order(&model.primal_graph(), &free, heuristic)
}

/// Sum of `factors` with `var` maximized out.
fn max_out(factors: &[LogPotential], var: usize) -> LogPotential {
    let mut scope: Vec<usize> = factors
        .iter()
        .flat_map(|f| f.scope().iter().copied())
        .filter(|&v| v != var)
        .collect();
    scope.sort_unstable();
    scope.dedup();
    let k = scope.len();
    // Per factor: stride of each output position, and of `var`.
    let strides: Vec<(Vec<usize>, usize)> = factors
        .iter()
        .map(|f| {
            let n = f.arity();
            let stride_of = |v: usize| {
                f.scope()
                    .iter()
                    .position(|&s| s == v)
                    .map_or(0, |k| 1usize << (n - 1 - k))
            };
            (
                scope.iter().map(|&v| stride_of(v)).collect(),
                stride_of(var),
            )
        })
        .collect();
    let mut table = Vec::with_capacity(1 << k);
    let mut base = vec![0usize; factors.len()];
    for idx in 0..(1usize << k) {
        for (b, (pos, _)) in base.iter_mut().zip(&strides) {
            *b = (0..k)
                .filter(|&j| (idx >> (k - 1 - j)) & 1 == 1)
                .map(|j| pos[j])
                .sum();
        }
        let mut best = f64::NEG_INFINITY;
        for value in 0..2usize {
            let sum: f64 = factors
                .iter()
                .zip(&base)
                .zip(&strides)
                .map(|((f, &b), (_, vs))| f.table()[b + value * vs])
                .sum();
            best = best.max(sum);
        }
        table.push(best);
    }
    LogPotential::from_parts(scope, table)
}

/// Restricted factors distributed into buckets along `order`.
struct Buckets {
    constant: f64,
    buckets: Vec<Vec<LogPotential>>,
    position: Vec<usize>,
}

impl Buckets {
    fn new(model: &GraphicalModel, evidence: &[Option<u8>], order: &[usize]) -> Result<Self> {
        let mut position = vec![usize::MAX; model.num_vars()];
        for (p, &v) in order.iter().enumerate() {
            if evidence[v].is_some() {
                continue;
            }
            if position[v] != usize::MAX {
                return Err(Error::InvalidOrder(format!("variable {v} appears twice")));
            }
            position[v] = p;
        }
        if let Some(v) =
            (0..model.num_vars()).find(|&v| evidence[v].is_none() && position[v] == usize::MAX)
        {
            return Err(Error::InvalidOrder(format!("free variable {v} is missing")));
        }
        let mut out = Buckets {
            constant: 0.0,
            buckets: vec![Vec::new(); order.len()],
            position,
        };
        for f in model.factors() {
            out.place(f.restrict(evidence));
        }
        Ok(out)
    }

    fn place(&mut self, f: LogPotential) {
        match f.scope().iter().map(|&v| self.position[v]).min() {
            Some(p) => self.buckets[p].push(f),
            None => self.constant += f.table()[0],
        }
    }
}

fn check_order_width(model: &GraphicalModel, evidence: &[Option<u8>], order: &[usize]) -> usize {
    let active: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&v| evidence[v].is_none())
        .collect();
    let conditioned = model.condition_dense(evidence);
    induced_width(&conditioned.primal_graph(), &active)
}

/// One maximizer of the model conditioned on `evidence`, as a dense full
/// assignment, by max-product bucket elimination and backward decoding.
fn bucket_elimination_dense(
    model: &GraphicalModel,
    evidence: &[Option<u8>],
    order: &[usize],
) -> Result<Vec<u8>> {
    let mut b = Buckets::new(model, evidence, order)?;
    let mut kept: Vec<Vec<LogPotential>> = vec![Vec::new(); order.len()];
    for p in 0..order.len() {
        let var = order[p];
        if evidence[var].is_some() {
            continue;
        }
        let bucket = std::mem::take(&mut b.buckets[p]);
        if !bucket.is_empty() {
            let msg = max_out(&bucket, var);
            b.place(msg);
        }
        kept[p] = bucket;
    }
    let mut values: Vec<u8> = evidence.iter().map(|v| v.unwrap_or(0)).collect();
    for p in (0..order.len()).rev() {
        let var = order[p];
        if evidence[var].is_some() {
            continue;
        }
        let score = |value: u8| -> f64 {
            kept[p]
                .iter()
                .map(|f| f.value_with(&values, var, value))
                .sum()
        };
        values[var] = (score(1) > score(0)) as u8;
    }
    Ok(values)
}

/// Exact MPE by bucket elimination along `order`.
///
/// Returns the completion of `evidence` and its log-score. The completion is
/// the lexicographically smallest maximizer (ascending index, 0 before 1),
/// matching [`crate::pgm::brute_force_mpe`].
pub fn bucket_elimination_mpe(
    model: &GraphicalModel,
    evidence: &Assignment,
    order: &EliminationOrder,
) -> Result<(Assignment, f64)> {
    evidence.validate(model.num_vars())?;
    let ev = evidence.to_dense(model.num_vars());
    let width = check_order_width(model, &ev, &order.order);
    if width > EXACT_WIDTH_LIMIT {
        return Err(Error::WidthLimit {
            width,
            limit: EXACT_WIDTH_LIMIT,
        });
    }
    let free = model.free_vars(evidence);
    let mut best = bucket_elimination_dense(model, &ev, &order.order)?;
    let optimum = model.log_score_dense(&best);
    if optimum == f64::NEG_INFINITY {
        let completion = free.iter().map(|&v| (v, 0)).collect();
        return Ok((completion, optimum));
    }
    // Walk towards the lexicographically smallest maximizer.
    let mut fixed = ev;
    for &v in &free {
        if best[v] == 1 {
            fixed[v] = Some(0);
            let candidate = bucket_elimination_dense(model, &fixed, &order.order)?;
            if model.log_score_dense(&candidate) >= optimum {
                best = candidate;
            }
        }
        fixed[v] = Some(best[v]);
    }
    let completion = free.iter().map(|&v| (v, best[v])).collect();
    Ok((completion, model.log_score_dense(&best)))
}

/// Mini-bucket upper bound on the dense-evidence conditioned model.
pub(crate) fn mini_bucket_dense(
    model: &GraphicalModel,
    evidence: &[Option<u8>],
    i_bound: usize,
    order: &[usize],
) -> Result<f64> {
    let mut b = Buckets::new(model, evidence, order)?;
    for (p, &var) in order.iter().enumerate() {
        if evidence[var].is_some() {
            continue;
        }
        let mut bucket = std::mem::take(&mut b.buckets[p]);
        if bucket.is_empty() {
            continue;
        }
        bucket.sort_by_key(|f| std::cmp::Reverse(f.arity()));
        let mut minis: Vec<(BTreeSet<usize>, Vec<LogPotential>)> = Vec::new();
        for f in bucket {
            let slot = minis.iter().position(|(scope, _)| {
                let extra = f.scope().iter().filter(|v| !scope.contains(v)).count();
                scope.len() + extra <= i_bound
            });
            match slot {
                Some(k) => {
                    minis[k].0.extend(f.scope().iter().copied());
                    minis[k].1.push(f);
                }
                None => minis.push((f.scope().iter().copied().collect(), vec![f])),
            }
        }
        for (_, group) in minis {
            let msg = max_out(&group, var);
            b.place(msg);
        }
    }
    Ok(b.constant)
}

/// Admissible upper bound on the MPE log-score given `evidence`.
///
/// Each bucket is split first-fit (largest scopes first) into mini-buckets
/// whose joint scope has at most `i_bound` variables. With
/// `i_bound > induced_width` no bucket is split and the bound is exact.
pub fn mini_bucket_bound(
    model: &GraphicalModel,
    evidence: &Assignment,
    i_bound: usize,
    order: &EliminationOrder,
) -> Result<BoundResult> {
    if i_bound == 0 {
        return Err(Error::Config("i-bound must be at least 1".into()));
    }
    evidence.validate(model.num_vars())?;
    let ev = evidence.to_dense(model.num_vars());
    let upper_bound = mini_bucket_dense(model, &ev, i_bound, &order.order)?;
    Ok(BoundResult {
        upper_bound,
        i_bound,
        order_used: order.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::{random_chain, random_model, RandomModelConfig};
    use crate::pgm::brute_force_mpe;

    fn graph(n: usize, edges: &[(usize, usize)]) -> PrimalGraph {
        let mut g = PrimalGraph::with_vertices(n);
        for &(a, b) in edges {
            g.add_edge(a, b);
        }
        g
    }

    #[test]
    fn widths_of_small_graphs() {
        let path = graph(4, &[(0, 1), (1, 2), (2, 3)]);
        assert_eq!(min_fill_order(&path, &[0, 1, 2, 3]).induced_width, 1);
        let tri = graph(3, &[(0, 1), (1, 2), (0, 2)]);
        assert_eq!(min_fill_order(&tri, &[0, 1, 2]).induced_width, 2);
        assert_eq!(min_fill_order(&tri, &[]).induced_width, 0);
    }

    #[test]
    fn order_is_a_permutation_of_free() {
        let m = random_model(&RandomModelConfig::mixed(12), 5);
        let free = vec![1, 3, 4, 7, 8, 11];
        for h in [OrderHeuristic::MinFill, OrderHeuristic::MinDegree] {
            let o = greedy_order(&m.primal_graph(), &free, h);
            let mut sorted = o.order.clone();
            sorted.sort();
            assert_eq!(sorted, free);
            assert_eq!(o.induced_width, induced_width(&m.primal_graph(), &o.order));
        }
    }

    #[test]
    fn unary_only_is_factorized() {
        let factors = (0..4)
            .map(|v| LogPotential::new(vec![v], vec![v as f64 * 0.1, 0.2]).unwrap())
            .collect();
        let m = GraphicalModel::new("u", 4, factors).unwrap();
        let order = elimination_order(&m, &Assignment::new(), OrderHeuristic::MinFill);
        let (a, v) = bucket_elimination_mpe(&m, &Assignment::new(), &order).unwrap();
        // argmax per variable: 1, 1, 0 (tie -> 0), 0
        assert_eq!(a, Assignment::from_dense(&[1, 1, 0, 0]));
        assert!((v - (0.2 + 0.2 + 0.2 + 0.3)).abs() < 1e-12);
    }

    #[test]
    fn chain_matches_brute_force() {
        let m = random_chain(10, 3);
        let order = elimination_order(&m, &Assignment::new(), OrderHeuristic::MinFill);
        let be = bucket_elimination_mpe(&m, &Assignment::new(), &order).unwrap();
        let bf = brute_force_mpe(&m, &Assignment::new()).unwrap();
        assert_eq!(be, bf);
    }

    #[test]
    fn fully_conditioned() {
        let m = random_chain(5, 1);
        let ev = Assignment::from_dense(&[1, 0, 1, 1, 0]);
        let order = elimination_order(&m, &ev, OrderHeuristic::MinFill);
        assert!(order.order.is_empty());
        let (a, v) = bucket_elimination_mpe(&m, &ev, &order).unwrap();
        assert!(a.is_empty());
        assert_eq!(v, m.log_score(&ev).unwrap());
        let b = mini_bucket_bound(&m, &ev, 2, &order).unwrap();
        assert!((b.upper_bound - v).abs() < 1e-12);
    }

    #[test]
    fn exact_regime_on_chain() {
        let m = random_chain(10, 9);
        let order = elimination_order(&m, &Assignment::new(), OrderHeuristic::MinFill);
        let (_, exact) = brute_force_mpe(&m, &Assignment::new()).unwrap();
        let b = mini_bucket_bound(&m, &Assignment::new(), order.induced_width + 1, &order).unwrap();
        assert!((b.upper_bound - exact).abs() < 1e-9);
    }

    #[test]
    fn i_bound_one_decouples_pairwise_factors() {
        // No unary factors, so every mini-bucket holds exactly one factor.
        let mut cfg = RandomModelConfig::mixed(8);
        cfg.unary = false;
        cfg.ternary = 0;
        let m = random_model(&cfg, 2);
        let order = elimination_order(&m, &Assignment::new(), OrderHeuristic::MinFill);
        let b = mini_bucket_bound(&m, &Assignment::new(), 1, &order).unwrap();
        let sum_max: f64 = m.factors().iter().map(LogPotential::max_entry).sum();
        let (_, exact) = brute_force_mpe(&m, &Assignment::new()).unwrap();
        assert!(b.upper_bound >= exact - 1e-9);
        assert!(b.upper_bound <= sum_max + 1e-9);

        let chain = GraphicalModel::new(
            "c",
            3,
            vec![
                LogPotential::new(vec![0, 1], vec![0.1, 0.9, 0.3, 0.2]).unwrap(),
                LogPotential::new(vec![1, 2], vec![0.5, 0.4, 0.8, 0.1]).unwrap(),
            ],
        )
        .unwrap();
        let order = EliminationOrder {
            order: vec![0, 1, 2],
            induced_width: 1,
        };
        let b = mini_bucket_bound(&chain, &Assignment::new(), 1, &order).unwrap();
        assert!((b.upper_bound - (0.9 + 0.8)).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_orders() {
        let m = random_chain(4, 0);
        let missing = EliminationOrder {
            order: vec![0, 1, 2],
            induced_width: 1,
        };
        assert!(matches!(
            mini_bucket_bound(&m, &Assignment::new(), 2, &missing),
            Err(Error::InvalidOrder(_))
        ));
        let dup = EliminationOrder {
            order: vec![0, 1, 2, 2, 3],
            induced_width: 1,
        };
        assert!(bucket_elimination_mpe(&m, &Assignment::new(), &dup).is_err());
        let order = elimination_order(&m, &Assignment::new(), OrderHeuristic::MinFill);
        assert!(mini_bucket_bound(&m, &Assignment::new(), 0, &order).is_err());
    }

    #[test]
    fn width_guard() {
        // A clique of 22 variables has induced width 21.
        let n = 22;
        let mut factors = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                factors.push(LogPotential::new(vec![a, b], vec![0.0; 4]).unwrap());
            }
        }
        let m = GraphicalModel::new("clique", n, factors).unwrap();
        let order = elimination_order(&m, &Assignment::new(), OrderHeuristic::MinFill);
        assert_eq!(order.induced_width, n - 1);
        assert!(matches!(
            bucket_elimination_mpe(&m, &Assignment::new(), &order),
            Err(Error::WidthLimit { .. })
        ));
    }
}
