//! Quality and effort metrics, decision timing and the experiment grid.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::bnb::{solve_mpe, BoundFirst, SolveStatus, SolverOptions, StrongBranching};
use crate::bounds::DEFAULT_I_BOUND;
use crate::conditioning::{
    solve_with_conditioning, ConditioningConfig, HeadMode, MaxDegreeScorer, NetworkScorer,
    PlantedScorer, ScoringFunction, Strategy, StrongScorer,
};
use crate::error::{Error, Result};
use crate::pgm::{Assignment, GraphicalModel};
use crate::scorer::ScorerNetwork;

/// Per-decision timeout after which a timing cell is reported as absent.
pub const DECISION_TIMEOUT: Duration = Duration::from_secs(30);

pub const CSV_COLUMNS: [&str; 10] = [
    "model",
    "strategy",
    "depth",
    "budget_ms",
    "n",
    "avg_pct_gap",
    "node_reduction",
    "wins",
    "mean_decision_s",
    "std_decision_s",
];

/// Mean of `(reference − other) / |reference| × 100`. Negative values mean
/// `other` scored higher.
pub fn avg_pct_gap(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Config("gap of an empty instance list".into()));
    }
    let mut sum = 0.0;
    for &(reference, other) in pairs {
        if reference == 0.0 || !reference.is_finite() || !other.is_finite() {
            return Err(Error::Config(format!(
                "gap needs finite scores and a non-zero reference, got ({reference}, {other})"
            )));
        }
        sum += (reference - other) / reference.abs() * 100.0;
    }
    Ok(sum / pairs.len() as f64)
}

/// Gap of a learned method against a default method, with the same sign
/// convention as [`avg_pct_gap`].
pub fn method_gap(pairs: &[(f64, f64)]) -> Result<f64> {
    avg_pct_gap(pairs)
}

/// Mean of `(before − after) / before × 100`; positive means fewer nodes.
pub fn node_reduction(pairs: &[(u64, u64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Config(
            "node reduction of an empty instance list".into(),
        ));
    }
    let mut sum = 0.0;
    for &(before, after) in pairs {
        if before == 0 {
            return Err(Error::Config(
                "node reduction needs a positive before-count".into(),
            ));
        }
        sum += (before as f64 - after as f64) / before as f64 * 100.0;
    }
    Ok(sum / pairs.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub pairs: Vec<(f64, f64)>,
    pub avg_pct_gap: f64,
    pub n: usize,
}

impl GapReport {
    pub fn new(pairs: Vec<(f64, f64)>) -> Result<Self> {
        Ok(Self {
            avg_pct_gap: avg_pct_gap(&pairs)?,
            n: pairs.len(),
            pairs,
        })
    }
}

/// Log-scores of one strategy on one configuration, with and without
/// conditioning, over the same instances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigScores {
    pub strategy: String,
    pub budget_ms: u64,
    pub conditioned: Vec<f64>,
    pub unconditioned: Vec<f64>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Whether the conditioned mean log-score strictly exceeds the
/// unconditioned one.
pub fn is_win(conditioned: &[f64], unconditioned: &[f64]) -> Result<bool> {
    if conditioned.len() != unconditioned.len() {
        return Err(Error::Config(format!(
            "mismatched instance counts {} and {}",
            conditioned.len(),
            unconditioned.len()
        )));
    }
    if conditioned.is_empty() {
        return Ok(false);
    }
    Ok(mean(conditioned) > mean(unconditioned))
}

/// Wins per strategy and budget.
pub fn win_count(configs: &[ConfigScores]) -> Result<BTreeMap<String, BTreeMap<u64, usize>>> {
    let mut out: BTreeMap<String, BTreeMap<u64, usize>> = BTreeMap::new();
    for c in configs {
        let win = is_win(&c.conditioned, &c.unconditioned)?;
        *out.entry(c.strategy.clone())
            .or_default()
            .entry(c.budget_ms)
            .or_default() += win as usize;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub mean_s: f64,
    /// Sample standard deviation; 0 for a single call.
    pub std_s: f64,
    pub calls: usize,
}

/// Wall time of single scoring calls at each instance's evidence, repeated
/// `repetitions` times. `None` when any call exceeds `timeout`.
pub fn per_decision_time(
    f: &dyn ScoringFunction,
    instances: &[(&GraphicalModel, &Assignment)],
    repetitions: usize,
    timeout: Duration,
) -> Result<Option<TimingStats>> {
    let mut times = Vec::with_capacity(instances.len() * repetitions);
    for _ in 0..repetitions {
        for &(model, evidence) in instances {
            let start = Instant::now();
            f.score(model, evidence)?;
            let t = start.elapsed();
            if t > timeout {
                return Ok(None);
            }
            times.push(t.as_secs_f64());
        }
    }
    if times.is_empty() {
        return Ok(None);
    }
    let m = mean(&times);
    let std_s = if times.len() > 1 {
        (times.iter().map(|t| (t - m).powi(2)).sum::<f64>() / (times.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(Some(TimingStats {
        mean_s: m,
        std_s,
        calls: times.len(),
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScorerKind {
    L2cOpt,
    L2cRank,
    Strong,
    MaxDegree,
    /// Planted scorer built from the exact optimum of each instance.
    Oracle,
}

impl ScorerKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::L2cOpt => "l2c-opt",
            Self::L2cRank => "l2c-rank",
            Self::Strong => "strong",
            Self::MaxDegree => "max-degree",
            Self::Oracle => "oracle",
        }
    }

    pub fn needs_network(self) -> bool {
        matches!(self, Self::L2cOpt | Self::L2cRank)
    }
}

impl std::str::FromStr for ScorerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Self::L2cOpt,
            Self::L2cRank,
            Self::Strong,
            Self::MaxDegree,
            Self::Oracle,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| Error::Config(format!("unknown scorer {s:?}")))
    }
}

/// Builds the scoring function of `kind` for one instance.
pub fn build_scorer(
    kind: ScorerKind,
    net: Option<&ScorerNetwork>,
    model: &GraphicalModel,
    evidence: &Assignment,
    i_bound: usize,
) -> Result<Box<dyn ScoringFunction>> {
    let network = |mode| {
        net.map(|n| NetworkScorer::new(n.clone(), mode))
            .ok_or_else(|| {
                Error::MissingArtifact(format!("{} needs a scorer checkpoint", kind.name()).into())
            })
    };
    Ok(match kind {
        ScorerKind::L2cOpt => Box::new(network(HeadMode::L2cOpt)?),
        ScorerKind::L2cRank => Box::new(network(HeadMode::L2cRank)?),
        ScorerKind::Strong => Box::new(StrongScorer { i_bound }),
        ScorerKind::MaxDegree => Box::new(MaxDegreeScorer::default()),
        ScorerKind::Oracle => Box::new(PlantedScorer::oracle(model, evidence)?),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentGrid {
    /// Conditioning depths as fractions of the query variables.
    pub depths: Vec<f64>,
    pub budgets_ms: Vec<u64>,
    pub strategies: Vec<ScorerKind>,
    pub search: Strategy,
    pub tau: f64,
    pub beam_width: usize,
    pub beta: f64,
    pub i_bound: usize,
}

impl Default for ExperimentGrid {
    fn default() -> Self {
        Self {
            depths: vec![0.05, 0.10, 0.15, 0.25],
            budgets_ms: vec![100, 300, 1000],
            strategies: vec![
                ScorerKind::L2cOpt,
                ScorerKind::L2cRank,
                ScorerKind::Strong,
                ScorerKind::MaxDegree,
            ],
            search: Strategy::Greedy,
            tau: 0.5,
            beam_width: 4,
            beta: 1.0,
            i_bound: DEFAULT_I_BOUND,
        }
    }
}

impl ExperimentGrid {
    pub fn validate(&self) -> Result<()> {
        if self.depths.is_empty() || self.budgets_ms.is_empty() || self.strategies.is_empty() {
            return Err(Error::Config(
                "every grid axis needs at least one entry".into(),
            ));
        }
        if let Some(d) = self.depths.iter().find(|d| !(0.0..=1.0).contains(*d)) {
            return Err(Error::Config(format!("depth {d} outside [0, 1]")));
        }
        if self.budgets_ms.contains(&0) {
            return Err(Error::Config("budgets must be positive".into()));
        }
        if self.i_bound == 0 {
            return Err(Error::Config("i-bound must be at least 1".into()));
        }
        Ok(())
    }

    fn conditioning(&self, d_max: usize, budget_ms: u64) -> ConditioningConfig {
        ConditioningConfig {
            tau: self.tau,
            d_max,
            beam_width: self.beam_width,
            final_budget_ms: budget_ms,
            beta: self.beta,
        }
    }
}

/// Number of conditioning decisions for `depth` of `query` variables.
pub fn depth_decisions(depth: f64, query: usize) -> usize {
    (depth * query as f64).round() as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub model: String,
    pub strategy: String,
    pub depth: f64,
    pub budget_ms: u64,
    /// Instances entering the averages.
    pub n: usize,
    /// Instances dropped because a solve found no solution.
    pub excluded: usize,
    pub avg_pct_gap: Option<f64>,
    pub node_reduction: Option<f64>,
    pub wins: usize,
    pub mean_decision_s: Option<f64>,
    pub std_decision_s: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub rows: Vec<GridRow>,
    /// Wins per strategy and budget, summed over depths.
    pub wins: BTreeMap<String, BTreeMap<u64, usize>>,
}

impl GridReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_COLUMNS)?;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.model.clone(),
                r.strategy.clone(),
                r.depth.to_string(),
                r.budget_ms.to_string(),
                r.n.to_string(),
                opt(r.avg_pct_gap),
                opt(r.node_reduction),
                r.wins.to_string(),
                opt(r.mean_decision_s),
                opt(r.std_decision_s),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

struct Baseline {
    score: f64,
    nodes: u64,
}

fn baseline(
    model: &GraphicalModel,
    evidence: &Assignment,
    budget_ms: u64,
    i_bound: usize,
) -> Result<Option<Baseline>> {
    let opts = SolverOptions {
        i_bound,
        ..SolverOptions::with_budget(Duration::from_millis(budget_ms))
    };
    let rec = solve_mpe(
        model,
        evidence,
        &opts,
        &StrongBranching::lite(model),
        &BoundFirst,
    )?;
    Ok((rec.status != SolveStatus::NoSolution).then_some(Baseline {
        score: rec.log_score,
        nodes: rec.nodes,
    }))
}

/// Runs every (strategy, depth, budget) configuration over `instances`,
/// comparing conditioned solves against unconditioned ones at equal budget.
pub fn run_grid(
    model: &GraphicalModel,
    instances: &[Assignment],
    grid: &ExperimentGrid,
    net: Option<&ScorerNetwork>,
) -> Result<GridReport> {
    grid.validate()?;
    if let Some(k) = grid
        .strategies
        .iter()
        .find(|k| k.needs_network() && net.is_none())
    {
        return Err(Error::MissingArtifact(
            format!("{} needs a scorer checkpoint", k.name()).into(),
        ));
    }
    let mut rows = Vec::new();
    let mut configs = Vec::new();
    for &kind in &grid.strategies {
        let scorers = instances
            .iter()
            .map(|ev| build_scorer(kind, net, model, ev, grid.i_bound))
            .collect::<Result<Vec<_>>>()?;
        let mut timing = Vec::new();
        for (f, ev) in scorers.iter().zip(instances) {
            match per_decision_time(f.as_ref(), &[(model, ev)], 1, DECISION_TIMEOUT)? {
                Some(t) => timing.push(t.mean_s),
                None => {
                    timing.clear();
                    break;
                }
            }
        }
        let timing = (!timing.is_empty()).then(|| {
            let m = mean(&timing);
            let s = if timing.len() > 1 {
                (timing.iter().map(|t| (t - m).powi(2)).sum::<f64>() / (timing.len() - 1) as f64)
                    .sqrt()
            } else {
                0.0
            };
            (m, s)
        });
        for &budget_ms in &grid.budgets_ms {
            let base = instances
                .iter()
                .map(|ev| baseline(model, ev, budget_ms, grid.i_bound))
                .collect::<Result<Vec<_>>>()?;
            for &depth in &grid.depths {
                let mut gaps = Vec::new();
                let mut nodes = Vec::new();
                let mut excluded = 0;
                for ((f, ev), b) in scorers.iter().zip(instances).zip(&base) {
                    let Some(b) = b else {
                        excluded += 1;
                        continue;
                    };
                    let d_max = depth_decisions(depth, model.num_vars() - ev.len());
                    let opts = SolverOptions {
                        i_bound: grid.i_bound,
                        ..SolverOptions::default()
                    };
                    let cfg = grid.conditioning(d_max, budget_ms);
                    match solve_with_conditioning(model, f.as_ref(), ev, &cfg, grid.search, &opts) {
                        Ok(sol) => {
                            gaps.push((b.score, sol.log_score));
                            nodes.push((b.nodes, sol.record.nodes));
                        }
                        Err(Error::NoSolution) => excluded += 1,
                        Err(e) => return Err(e),
                    }
                }
                let (reference, conditioned): (Vec<f64>, Vec<f64>) = gaps.iter().copied().unzip();
                let win = is_win(&conditioned, &reference)?;
                configs.push(ConfigScores {
                    strategy: kind.name().into(),
                    budget_ms,
                    conditioned,
                    unconditioned: reference,
                });
                rows.push(GridRow {
                    model: model.name().into(),
                    strategy: kind.name().into(),
                    depth,
                    budget_ms,
                    n: gaps.len(),
                    excluded,
                    avg_pct_gap: avg_pct_gap(&gaps).ok(),
                    node_reduction: node_reduction(&nodes).ok(),
                    wins: win as usize,
                    mean_decision_s: timing.map(|t| t.0),
                    std_decision_s: timing.map(|t| t.1),
                });
            }
        }
    }
    Ok(GridReport {
        rows,
        wins: win_count(&configs)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gap_fixtures() {
        assert_eq!(avg_pct_gap(&[(-10.0, -9.0)]).unwrap(), -10.0);
        assert_eq!(avg_pct_gap(&[(-10.0, -9.0), (-20.0, -22.0)]).unwrap(), 0.0);
        assert_eq!(method_gap(&[(-100.0, -90.0)]).unwrap(), -10.0);
        assert_eq!(method_gap(&[(-100.0, -110.0)]).unwrap(), 10.0);
        assert!(avg_pct_gap(&[(0.0, -1.0)]).is_err());
        assert!(avg_pct_gap(&[(f64::NEG_INFINITY, -1.0)]).is_err());
        assert!(avg_pct_gap(&[]).is_err());
    }

    #[test]
    fn node_fixtures() {
        assert_eq!(node_reduction(&[(1000, 500)]).unwrap(), 50.0);
        assert_eq!(node_reduction(&[(100, 150)]).unwrap(), -50.0);
        assert_eq!(node_reduction(&[(7, 7)]).unwrap(), 0.0);
        assert!(node_reduction(&[(0, 1)]).is_err());
    }

    #[test]
    fn scorer_names_round_trip() {
        for k in [
            ScorerKind::L2cOpt,
            ScorerKind::L2cRank,
            ScorerKind::Strong,
            ScorerKind::MaxDegree,
            ScorerKind::Oracle,
        ] {
            assert_eq!(k.name().parse::<ScorerKind>().unwrap(), k);
        }
        assert!("nn".parse::<ScorerKind>().is_err());
    }
}
