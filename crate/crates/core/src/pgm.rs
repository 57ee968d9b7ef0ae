//! Binary graphical models in log-space.
//!
//! A model is a set of binary variables and a list of log-potentials. The
//! unnormalized log-score of a full assignment is the sum of the table entries
//! each factor selects; a `-inf` entry marks a zero-probability configuration
//! and absorbs everything it is added to.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest number of free variables `brute_force_mpe` will enumerate.
pub const BRUTE_FORCE_LIMIT: usize = 25;

/// A factor stored in log-space.
///
/// Tables are row-major over `scope`: the first scope variable is the most
/// significant bit and value 0 precedes value 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogPotential {
    scope: Vec<usize>,
    table: Vec<f64>,
}

impl LogPotential {
    pub fn new(scope: Vec<usize>, table: Vec<f64>) -> Result<Self> {
        if scope.len() >= usize::BITS as usize - 1 {
            return Err(Error::InvalidModel(format!(
                "factor scope of size {} is too large",
                scope.len()
            )));
        }
        let expected = 1usize << scope.len();
        if table.len() != expected {
            return Err(Error::InvalidModel(format!(
                "factor over {} variables needs {} entries, got {}",
                scope.len(),
                expected,
                table.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for &v in &scope {
            if !seen.insert(v) {
                return Err(Error::InvalidModel(format!(
                    "variable {v} appears twice in one scope"
                )));
            }
        }
        if let Some(bad) = table.iter().find(|x| x.is_nan() || **x == f64::INFINITY) {
            return Err(Error::InvalidModel(format!(
                "log-potential entry {bad} is not a finite real or -inf"
            )));
        }
        Ok(Self { scope, table })
    }

    /// Internal constructor for tables produced by elimination.
    pub(crate) fn from_parts(scope: Vec<usize>, table: Vec<f64>) -> Self {
        debug_assert_eq!(table.len(), 1 << scope.len());
        Self { scope, table }
    }

    /// A factor with empty scope holding a single constant.
    pub fn constant(value: f64) -> Self {
        Self {
            scope: Vec::new(),
            table: vec![value],
        }
    }

    pub fn scope(&self) -> &[usize] {
        &self.scope
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn arity(&self) -> usize {
        self.scope.len()
    }

    /// Table index selected by a dense full (or scope-covering) assignment.
    #[inline]
    pub fn index_dense(&self, values: &[u8]) -> usize {
        self.scope
            .iter()
            .fold(0usize, |idx, &v| (idx << 1) | values[v] as usize)
    }

    #[inline]
    pub fn value_dense(&self, values: &[u8]) -> f64 {
        self.table[self.index_dense(values)]
    }

    /// Entry selected when `var` is forced to `value` and every other scope
    /// variable is read from `values`.
    #[inline]
    pub(crate) fn value_with(&self, values: &[u8], var: usize, value: u8) -> f64 {
        let idx = self.scope.iter().fold(0usize, |idx, &v| {
            let bit = if v == var { value } else { values[v] };
            (idx << 1) | bit as usize
        });
        self.table[idx]
    }

    /// Restricts the factor to the variables left unassigned by `evidence`.
    pub(crate) fn restrict(&self, evidence: &[Option<u8>]) -> LogPotential {
        if self.scope.iter().all(|&v| evidence[v].is_none()) {
            return self.clone();
        }
        let n = self.scope.len();
        let mut fixed_offset = 0usize;
        let mut free_strides = Vec::with_capacity(n);
        let mut scope = Vec::with_capacity(n);
        for (k, &v) in self.scope.iter().enumerate() {
            let stride = 1usize << (n - 1 - k);
            match evidence[v] {
                Some(val) => fixed_offset += stride * val as usize,
                None => {
                    scope.push(v);
                    free_strides.push(stride);
                }
            }
        }
        let m = scope.len();
        let mut table = Vec::with_capacity(1 << m);
        for idx in 0..(1usize << m) {
            let mut src = fixed_offset;
            for (j, stride) in free_strides.iter().enumerate() {
                if (idx >> (m - 1 - j)) & 1 == 1 {
                    src += stride;
                }
            }
            table.push(self.table[src]);
        }
        LogPotential { scope, table }
    }

    /// Largest entry of the table.
    pub fn max_entry(&self) -> f64 {
        self.table.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Partial map from variable index to a binary value.
///
/// Ordering compares the sorted `(variable, value)` sequences
/// lexicographically, which is the tie-break used throughout the crate.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "Vec<(usize, u8)>", into = "Vec<(usize, u8)>")]
pub struct Assignment(BTreeMap<usize, u8>);

impl From<Vec<(usize, u8)>> for Assignment {
    fn from(pairs: Vec<(usize, u8)>) -> Self {
        Assignment(pairs.into_iter().collect())
    }
}

impl From<Assignment> for Vec<(usize, u8)> {
    fn from(a: Assignment) -> Self {
        a.0.into_iter().collect()
    }
}

impl FromIterator<(usize, u8)> for Assignment {
    fn from_iter<I: IntoIterator<Item = (usize, u8)>>(iter: I) -> Self {
        Assignment(iter.into_iter().collect())
    }
}

impl Assignment {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds an assignment, rejecting duplicate indices and non-binary values.
    pub fn try_from_pairs(pairs: impl IntoIterator<Item = (usize, u8)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (var, val) in pairs {
            if val > 1 {
                return Err(Error::InvalidAssignment(format!(
                    "value {val} for variable {var} is not binary"
                )));
            }
            if map.insert(var, val).is_some() {
                return Err(Error::InvalidAssignment(format!("duplicate index {var}")));
            }
        }
        Ok(Assignment(map))
    }

    pub fn from_dense(values: &[u8]) -> Self {
        values.iter().enumerate().map(|(i, &v)| (i, v)).collect()
    }

    pub fn from_partial_dense(values: &[Option<u8>]) -> Self {
        values
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (i, v)))
            .collect()
    }

    pub fn get(&self, var: usize) -> Option<u8> {
        self.0.get(&var).copied()
    }

    pub fn contains(&self, var: usize) -> bool {
        self.0.contains_key(&var)
    }

    pub fn insert(&mut self, var: usize, value: u8) -> Option<u8> {
        debug_assert!(value <= 1);
        self.0.insert(var, value)
    }

    pub fn remove(&mut self, var: usize) -> Option<u8> {
        self.0.remove(&var)
    }

    pub fn with(&self, var: usize, value: u8) -> Self {
        let mut out = self.clone();
        out.insert(var, value);
        out
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, u8)> + '_ {
        self.0.iter().map(|(&k, &v)| (k, v))
    }

    pub fn vars(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.keys().copied()
    }

    /// Union of two assignments; entries of `other` win on overlap.
    pub fn union(&self, other: &Assignment) -> Assignment {
        let mut out = self.clone();
        out.0.extend(other.iter());
        out
    }

    /// Restriction to the given variables.
    pub fn project(&self, vars: &[usize]) -> Assignment {
        vars.iter()
            .filter_map(|&v| self.get(v).map(|x| (v, x)))
            .collect()
    }

    pub fn is_disjoint(&self, other: &Assignment) -> bool {
        self.vars().all(|v| !other.contains(v))
    }

    pub fn validate(&self, num_vars: usize) -> Result<()> {
        match self.vars().find(|&v| v >= num_vars) {
            Some(v) => Err(Error::InvalidAssignment(format!(
                "index {v} out of range for {num_vars} variables"
            ))),
            None => Ok(()),
        }
    }

    pub fn to_dense(&self, num_vars: usize) -> Vec<Option<u8>> {
        let mut out = vec![None; num_vars];
        for (v, x) in self.iter() {
            out[v] = Some(x);
        }
        out
    }

    /// Dense full assignment; fails on the first unassigned variable.
    pub fn to_full(&self, num_vars: usize) -> Result<Vec<u8>> {
        (0..num_vars)
            .map(|v| self.get(v).ok_or(Error::IncompleteAssignment(v)))
            .collect()
    }
}

/// Undirected graph with an edge between every pair of variables that share a
/// factor scope.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrimalGraph {
    adjacency: Vec<BTreeSet<usize>>,
}

impl PrimalGraph {
    pub fn with_vertices(n: usize) -> Self {
        Self {
            adjacency: vec![BTreeSet::new(); n],
        }
    }

    pub fn add_edge(&mut self, a: usize, b: usize) {
        if a != b {
            self.adjacency[a].insert(b);
            self.adjacency[b].insert(a);
        }
    }

    pub fn num_vertices(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, v: usize) -> &BTreeSet<usize> {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adjacency.iter().map(BTreeSet::len).collect()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a].contains(&b)
    }

    /// Edges as `(a, b)` with `a < b`, ascending.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(a, nb)| nb.iter().filter(move |&&b| b > a).map(move |&b| (a, b)))
            .collect()
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(BTreeSet::len).sum::<usize>() / 2
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphicalModel {
    name: String,
    cardinalities: Vec<usize>,
    factors: Vec<LogPotential>,
    /// Factors touching each variable, for local updates.
    var_factors: Vec<Vec<usize>>,
}

impl GraphicalModel {
    pub fn new(
        name: impl Into<String>,
        num_vars: usize,
        factors: Vec<LogPotential>,
    ) -> Result<Self> {
        for (i, f) in factors.iter().enumerate() {
            if let Some(&v) = f.scope().iter().find(|&&v| v >= num_vars) {
                return Err(Error::InvalidModel(format!(
                    "factor {i} references variable {v} but the model has {num_vars}"
                )));
            }
        }
        let mut var_factors = vec![Vec::new(); num_vars];
        for (i, f) in factors.iter().enumerate() {
            for &v in f.scope() {
                var_factors[v].push(i);
            }
        }
        Ok(Self {
            name: name.into(),
            cardinalities: vec![2; num_vars],
            factors,
            var_factors,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_vars(&self) -> usize {
        self.cardinalities.len()
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cardinalities
    }

    pub fn factors(&self) -> &[LogPotential] {
        &self.factors
    }

    /// Indices of factors whose scope contains `var`.
    pub fn factors_of(&self, var: usize) -> &[usize] {
        &self.var_factors[var]
    }

    /// Sum of the empty-scope factors.
    pub fn constant_offset(&self) -> f64 {
        self.factors
            .iter()
            .filter(|f| f.arity() == 0)
            .map(|f| f.table()[0])
            .sum()
    }

    /// Unnormalized log-score of a full assignment.
    pub fn log_score(&self, full: &Assignment) -> Result<f64> {
        full.validate(self.num_vars())?;
        let dense = full.to_full(self.num_vars())?;
        Ok(self.log_score_dense(&dense))
    }

    #[inline]
    pub fn log_score_dense(&self, values: &[u8]) -> f64 {
        self.factors.iter().map(|f| f.value_dense(values)).sum()
    }

    pub fn primal_graph(&self) -> PrimalGraph {
        let mut g = PrimalGraph::with_vertices(self.num_vars());
        for f in &self.factors {
            let s = f.scope();
            for (i, &a) in s.iter().enumerate() {
                for &b in &s[i + 1..] {
                    g.add_edge(a, b);
                }
            }
        }
        g
    }

    /// Fixes the variables of `partial`, keeping variable indices.
    ///
    /// Factors that become fully instantiated are summed, together with any
    /// existing empty-scope factors, into a single trailing constant factor,
    /// so the conditioned model's log-score of any extension of `partial`
    /// equals the original's.
    pub fn condition(&self, partial: &Assignment) -> GraphicalModel {
        if partial.is_empty() {
            return self.clone();
        }
        self.condition_dense(&partial.to_dense(self.num_vars()))
    }

    pub(crate) fn condition_dense(&self, evidence: &[Option<u8>]) -> GraphicalModel {
        let mut factors = Vec::with_capacity(self.factors.len() + 1);
        let mut offset = 0.0;
        let mut collapsed = false;
        for f in &self.factors {
            let r = f.restrict(evidence);
            if r.arity() == 0 {
                offset += r.table[0];
                collapsed |= f.arity() > 0;
            } else {
                factors.push(r);
            }
        }
        let had_constants = self.factors.iter().any(|f| f.arity() == 0);
        if collapsed || had_constants {
            factors.push(LogPotential::constant(offset));
        }
        GraphicalModel::new(self.name.clone(), self.num_vars(), factors)
            .expect("conditioning preserves validity")
    }

    /// Variables not fixed by `evidence`, ascending.
    pub fn free_vars(&self, evidence: &Assignment) -> Vec<usize> {
        (0..self.num_vars())
            .filter(|&v| !evidence.contains(v))
            .collect()
    }
}

/// Exact MPE by enumerating every completion of `evidence`.
///
/// Returns the completion (free variables only) and the log-score of
/// `evidence ∪ completion`. Ties go to the lexicographically smallest
/// completion: ascending variable index, value 0 before 1.
pub fn brute_force_mpe(model: &GraphicalModel, evidence: &Assignment) -> Result<(Assignment, f64)> {
    evidence.validate(model.num_vars())?;
    let free = model.free_vars(evidence);
    if free.len() > BRUTE_FORCE_LIMIT {
        return Err(Error::TooManyFreeVariables {
            free: free.len(),
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let mut values: Vec<u8> = (0..model.num_vars())
        .map(|v| evidence.get(v).unwrap_or(0))
        .collect();
    let k = free.len();
    let mut best_mask = 0usize;
    let mut best = f64::NEG_INFINITY;
    let mut first = true;
    for mask in 0..(1usize << k) {
        for (j, &v) in free.iter().enumerate() {
            values[v] = ((mask >> (k - 1 - j)) & 1) as u8;
        }
        let score = model.log_score_dense(&values);
        if first || score > best {
            best = score;
            best_mask = mask;
            first = false;
        }
    }
    let completion = free
        .iter()
        .enumerate()
        .map(|(j, &v)| (v, ((best_mask >> (k - 1 - j)) & 1) as u8))
        .collect();
    Ok((completion, best))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unary(p0: f64, p1: f64) -> GraphicalModel {
        GraphicalModel::new(
            "unary",
            1,
            vec![LogPotential::new(vec![0], vec![p0.ln(), p1.ln()]).unwrap()],
        )
        .unwrap()
    }

    #[test]
    fn log_score_single_lookup() {
        let m = unary(0.25, 0.75);
        let x = Assignment::from(vec![(0, 1)]);
        assert_eq!(m.log_score(&x).unwrap(), 0.75f64.ln());
    }

    #[test]
    fn log_score_absorbs_neg_inf() {
        let f = LogPotential::new(vec![0, 1], vec![0.0, f64::NEG_INFINITY, 1.0, 2.0]).unwrap();
        let g = LogPotential::new(vec![1], vec![0.5, 0.5]).unwrap();
        let m = GraphicalModel::new("m", 2, vec![f, g]).unwrap();
        let x = Assignment::from(vec![(0, 0), (1, 1)]);
        assert_eq!(m.log_score(&x).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn log_score_requires_full_assignment() {
        let m = unary(0.5, 0.5);
        assert!(matches!(
            m.log_score(&Assignment::new()),
            Err(Error::IncompleteAssignment(0))
        ));
    }

    #[test]
    fn rejects_bad_factors() {
        assert!(LogPotential::new(vec![0, 1], vec![0.0; 3]).is_err());
        assert!(LogPotential::new(vec![0, 0], vec![0.0; 4]).is_err());
        assert!(LogPotential::new(vec![0], vec![0.0, f64::NAN]).is_err());
        assert!(LogPotential::new(vec![0], vec![0.0, f64::INFINITY]).is_err());
        let f = LogPotential::new(vec![3], vec![0.0, 0.0]).unwrap();
        assert!(GraphicalModel::new("m", 2, vec![f]).is_err());
    }

    #[test]
    fn primal_graph_shapes() {
        let m = unary(0.5, 0.5);
        assert_eq!(m.primal_graph().num_edges(), 0);

        let tri = GraphicalModel::new(
            "tri",
            3,
            vec![LogPotential::new(vec![0, 1, 2], vec![0.0; 8]).unwrap()],
        )
        .unwrap();
        let g = tri.primal_graph();
        assert_eq!(g.edges(), vec![(0, 1), (0, 2), (1, 2)]);
        assert_eq!(g.degrees(), vec![2, 2, 2]);

        let chain = GraphicalModel::new(
            "chain",
            4,
            (0..3)
                .map(|i| LogPotential::new(vec![i, i + 1], vec![0.0; 4]).unwrap())
                .collect(),
        )
        .unwrap();
        let g = chain.primal_graph();
        assert_eq!(g.degrees(), vec![1, 2, 2, 1]);
        assert!(g.has_edge(2, 1) && !g.has_edge(0, 2));
    }

    #[test]
    fn condition_empty_is_identity() {
        let m = unary(0.3, 0.7);
        assert_eq!(m.condition(&Assignment::new()), m);
    }

    #[test]
    fn condition_slices_rows() {
        let t = vec![0.1, 0.2, 0.3, 0.4];
        let m =
            GraphicalModel::new("m", 2, vec![LogPotential::new(vec![0, 1], t).unwrap()]).unwrap();
        let c = m.condition(&Assignment::from(vec![(0, 1)]));
        assert_eq!(c.factors().len(), 1);
        assert_eq!(c.factors()[0].scope(), &[1]);
        assert_eq!(c.factors()[0].table(), &[0.3, 0.4]);
        assert_eq!(c.num_vars(), 2);
    }

    #[test]
    fn condition_collapses_to_constant() {
        let m = GraphicalModel::new(
            "m",
            2,
            vec![
                LogPotential::new(vec![0], vec![0.1, 0.2]).unwrap(),
                LogPotential::new(vec![0, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            ],
        )
        .unwrap();
        let c = m.condition(&Assignment::from(vec![(0, 1)]));
        assert_eq!(c.factors().last().unwrap().arity(), 0);
        assert!((c.constant_offset() - 0.2).abs() < 1e-15);
        let full = Assignment::from(vec![(0, 1), (1, 0)]);
        assert!((c.log_score(&full).unwrap() - m.log_score(&full).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn brute_force_examples() {
        let m = unary(0.25, 0.75);
        let (a, v) = brute_force_mpe(&m, &Assignment::new()).unwrap();
        assert_eq!(a, Assignment::from(vec![(0, 1)]));
        assert_eq!(v, 0.75f64.ln());

        let uniform = GraphicalModel::new(
            "u",
            4,
            vec![
                LogPotential::new(vec![0, 1], vec![0.5; 4]).unwrap(),
                LogPotential::new(vec![2, 3], vec![-1.0; 4]).unwrap(),
            ],
        )
        .unwrap();
        let (a, _) = brute_force_mpe(&uniform, &Assignment::new()).unwrap();
        assert_eq!(a, Assignment::from_dense(&[0, 0, 0, 0]));
    }

    #[test]
    fn brute_force_respects_evidence_and_guard() {
        let m = GraphicalModel::new(
            "m",
            2,
            vec![LogPotential::new(vec![0, 1], vec![5.0, 0.0, 0.0, 1.0]).unwrap()],
        )
        .unwrap();
        let (a, v) = brute_force_mpe(&m, &Assignment::from(vec![(0, 1)])).unwrap();
        assert_eq!(a, Assignment::from(vec![(1, 1)]));
        assert_eq!(v, 1.0);

        let big = GraphicalModel::new("big", 26, vec![]).unwrap();
        assert!(matches!(
            brute_force_mpe(&big, &Assignment::new()),
            Err(Error::TooManyFreeVariables { .. })
        ));
    }

    #[test]
    fn assignment_validation() {
        assert!(Assignment::try_from_pairs([(0, 1), (0, 0)]).is_err());
        assert!(Assignment::try_from_pairs([(0, 2)]).is_err());
        let a = Assignment::try_from_pairs([(3, 0), (0, 1)]).unwrap();
        assert!(a.validate(3).is_err());
        assert!(a.validate(4).is_ok());
        assert_eq!(a.to_dense(4), vec![Some(1), None, None, Some(0)]);
    }

    #[test]
    fn assignment_order_is_lexicographic() {
        let base = Assignment::from(vec![(1, 0), (4, 1)]);
        let a = base.with(2, 0);
        let b = base.with(2, 1);
        let c = base.with(3, 0);
        assert!(a < b && b < c);
        assert!(base.with(0, 1) < a);
    }
}
