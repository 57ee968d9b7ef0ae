//! Conditioning strategies and network-guided search policies.
//!
//! A [`ScoringFunction`] rates every free `(variable, value)` pair given the
//! current evidence with an optimality score `ŷ` and a simplification score
//! `s`. Greedy and beam conditioning use it to fix a few query variables
//! before the residual instance is handed to the solver.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::bnb::{
    solve_mpe, BoundFirst, BranchPolicy, ChildDescriptor, NodeContext, NodePolicy, SolveRecord,
    SolveStatus, SolverOptions, StrongBranching,
};
use crate::bounds::{self, mini_bucket_dense, OrderHeuristic};
use crate::error::{Error, Result};
use crate::pgm::{Assignment, GraphicalModel};
use crate::sampling::{estimate_mode_values, GibbsConfig};
use crate::scorer::{build_tokens, forward, ScorerNetwork};

/// Floor applied to `ŷ` before taking logs.
pub const OPT_FLOOR: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    pub var: usize,
    pub value: u8,
    pub opt: f64,
    pub simp: f64,
}

pub trait ScoringFunction {
    fn name(&self) -> &str;

    /// Scores candidate pairs over the variables free under `evidence`.
    fn score(&self, model: &GraphicalModel, evidence: &Assignment) -> Result<Vec<Candidate>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadMode {
    /// Ranks by the optimality head alone.
    L2cOpt,
    /// Uses both heads.
    L2cRank,
}

/// Scores candidates with a trained network.
#[derive(Clone, Debug)]
pub struct NetworkScorer {
    pub net: ScorerNetwork,
    pub mode: HeadMode,
}

impl NetworkScorer {
    pub fn new(net: ScorerNetwork, mode: HeadMode) -> Self {
        Self { net, mode }
    }

    /// Network scores of both values of every variable in `free`.
    pub fn score_free(&self, evidence: &Assignment, free: &[usize]) -> Result<Vec<Candidate>> {
        let tokens = build_tokens(&self.net, evidence, free)?;
        let out = forward(&self.net, &tokens);
        Ok((0..tokens.num_candidates())
            .map(|j| {
                let (var, value) = tokens.candidate(j);
                let simp = match self.mode {
                    HeadMode::L2cOpt => out.opt[j],
                    HeadMode::L2cRank => out.simp[j],
                };
                Candidate {
                    var,
                    value,
                    opt: out.opt[j],
                    simp,
                }
            })
            .collect())
    }

    fn check(&self, model: &GraphicalModel) -> Result<()> {
        if self.net.num_vars != model.num_vars() {
            return Err(Error::Shape(format!(
                "network has {} variables, the model has {}",
                self.net.num_vars,
                model.num_vars()
            )));
        }
        Ok(())
    }
}

impl ScoringFunction for NetworkScorer {
    fn name(&self) -> &str {
        match self.mode {
            HeadMode::L2cOpt => "l2c-opt",
            HeadMode::L2cRank => "l2c-rank",
        }
    }

    fn score(&self, model: &GraphicalModel, evidence: &Assignment) -> Result<Vec<Candidate>> {
        self.check(model)?;
        self.score_free(evidence, &model.free_vars(evidence))
    }
}

/// Strong-branching scores: `s` is the bound improvement of the variable,
/// `ŷ` is 1 on the value with the larger child bound and 0 on the other.
#[derive(Clone, Copy, Debug)]
pub struct StrongScorer {
    pub i_bound: usize,
}

impl ScoringFunction for StrongScorer {
    fn name(&self) -> &str {
        "strong-branching"
    }

    fn score(&self, model: &GraphicalModel, evidence: &Assignment) -> Result<Vec<Candidate>> {
        evidence.validate(model.num_vars())?;
        let order = bounds::elimination_order(model, evidence, OrderHeuristic::MinFill).order;
        let mut dense = evidence.to_dense(model.num_vars());
        let parent = mini_bucket_dense(model, &dense, self.i_bound, &order)?;
        let mut out = Vec::new();
        for var in model.free_vars(evidence) {
            let mut b = [0.0; 2];
            for value in 0..2u8 {
                dense[var] = Some(value);
                b[value as usize] = mini_bucket_dense(model, &dense, self.i_bound, &order)?;
            }
            dense[var] = None;
            let best = (b[1] > b[0]) as u8;
            let score = if parent == f64::NEG_INFINITY {
                0.0
            } else {
                (parent - b[0].max(b[1])).max(0.0)
            };
            for value in 0..2u8 {
                out.push(Candidate {
                    var,
                    value,
                    opt: (value == best) as u8 as f64,
                    simp: score,
                });
            }
        }
        Ok(out)
    }
}

/// Degree-based scores: `s` is the degree in the primal graph with evidence
/// removed, `ŷ` is 1 on the Gibbs-estimated mode and 0 on the other value.
#[derive(Clone, Copy, Debug)]
pub struct MaxDegreeScorer {
    pub gibbs: GibbsConfig,
    pub samples: usize,
}

impl Default for MaxDegreeScorer {
    fn default() -> Self {
        Self {
            gibbs: GibbsConfig::default(),
            samples: crate::bnb::MODE_SAMPLES,
        }
    }
}

impl ScoringFunction for MaxDegreeScorer {
    fn name(&self) -> &str {
        "max-degree"
    }

    fn score(&self, model: &GraphicalModel, evidence: &Assignment) -> Result<Vec<Candidate>> {
        let modes = estimate_mode_values(model, evidence, self.samples, &self.gibbs)?;
        let degrees = model.condition(evidence).primal_graph().degrees();
        Ok(model
            .free_vars(evidence)
            .into_iter()
            .flat_map(|var| {
                let mode = modes.get(var).unwrap_or(0);
                let degree = degrees[var] as f64;
                (0..2u8).map(move |value| Candidate {
                    var,
                    value,
                    opt: (value == mode) as u8 as f64,
                    simp: degree,
                })
            })
            .collect())
    }
}

/// Scorer built from a known full assignment: `ŷ = 1` on its pairs (or on
/// the opposite pairs when adversarial), `s` = variable index.
#[derive(Clone, Debug)]
pub struct PlantedScorer {
    pub target: Assignment,
    pub adversarial: bool,
}

impl PlantedScorer {
    /// Plants the exact MPE completion of `evidence`.
    pub fn oracle(model: &GraphicalModel, evidence: &Assignment) -> Result<Self> {
        let (completion, _) = crate::pgm::brute_force_mpe(model, evidence)?;
        Ok(Self {
            target: evidence.union(&completion),
            adversarial: false,
        })
    }
}

impl ScoringFunction for PlantedScorer {
    fn name(&self) -> &str {
        if self.adversarial {
            "planted-adversarial"
        } else {
            "planted"
        }
    }

    fn score(&self, model: &GraphicalModel, evidence: &Assignment) -> Result<Vec<Candidate>> {
        Ok(model
            .free_vars(evidence)
            .into_iter()
            .flat_map(|var| {
                let hit = self.target.get(var);
                let adversarial = self.adversarial;
                (0..2u8).map(move |value| Candidate {
                    var,
                    value,
                    opt: ((hit == Some(value)) != adversarial) as u8 as f64,
                    simp: var as f64,
                })
            })
            .collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Greedy,
    Beam,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Self::Greedy),
            "beam" => Ok(Self::Beam),
            _ => Err(Error::Config(format!("unknown strategy {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConditioningConfig {
    /// Optimality threshold of greedy conditioning.
    pub tau: f64,
    pub d_max: usize,
    pub beam_width: usize,
    pub final_budget_ms: u64,
    /// Weight of the normalised simplification score in beam steps.
    pub beta: f64,
}

impl Default for ConditioningConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            d_max: 1,
            beam_width: 4,
            final_budget_ms: 1000,
            beta: 1.0,
        }
    }
}

impl ConditioningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau {} outside [0, 1]", self.tau)));
        }
        if self.beam_width == 0 {
            return Err(Error::Config("beam width must be at least 1".into()));
        }
        if self.final_budget_ms == 0 {
            return Err(Error::Config("final budget must be positive".into()));
        }
        Ok(())
    }
}

/// Greedy preference: larger `s`, then larger `ŷ`, then smaller variable,
/// then value 0.
fn greedy_better(a: &Candidate, b: &Candidate) -> bool {
    a.simp
        .total_cmp(&b.simp)
        .then(a.opt.total_cmp(&b.opt))
        .then(b.var.cmp(&a.var))
        .then(b.value.cmp(&a.value))
        .is_gt()
}

/// The greedy choice among candidates with `ŷ ≥ tau`.
pub fn greedy_pick(cands: &[Candidate], tau: f64) -> Option<Candidate> {
    cands
        .iter()
        .filter(|c| c.opt >= tau)
        .fold(None, |best: Option<&Candidate>, c| match best {
            Some(b) if !greedy_better(c, b) => Some(b),
            _ => Some(c),
        })
        .copied()
}

/// Repeatedly fixes the best confident candidate, at most `d_max` times.
pub fn greedy_condition(
    model: &GraphicalModel,
    f: &dyn ScoringFunction,
    evidence: &Assignment,
    cfg: &ConditioningConfig,
) -> Result<Assignment> {
    evidence.validate(model.num_vars())?;
    let mut e = evidence.clone();
    for _ in 0..cfg.d_max {
        let cands = f.score(model, &e)?;
        match greedy_pick(&cands, cfg.tau) {
            Some(c) => {
                e.insert(c.var, c.value);
            }
            None => break,
        }
    }
    Ok(e)
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let top = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|&x| (x - top).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Step scores `ln max(ŷ, floor) + β·softmax(s)` of one expansion.
pub fn beam_step_scores(cands: &[Candidate], beta: f64) -> Vec<f64> {
    let norm = softmax(&cands.iter().map(|c| c.simp).collect::<Vec<_>>());
    cands
        .iter()
        .zip(norm)
        .map(|(c, s)| c.opt.max(OPT_FLOOR).ln() + beta * s)
        .collect()
}

/// Beam search over conditioning sequences of length `d_max`. Returns the
/// best evidence and its cumulative score.
pub fn beam_condition_scored(
    model: &GraphicalModel,
    f: &dyn ScoringFunction,
    evidence: &Assignment,
    cfg: &ConditioningConfig,
) -> Result<(Assignment, f64)> {
    evidence.validate(model.num_vars())?;
    if cfg.beam_width == 0 {
        return Err(Error::Config("beam width must be at least 1".into()));
    }
    let mut beam: Vec<(f64, Assignment)> = vec![(0.0, evidence.clone())];
    for _ in 0..cfg.d_max {
        let mut next = Vec::new();
        for (score, e) in &beam {
            let cands = f.score(model, e)?;
            for (c, step) in cands.iter().zip(beam_step_scores(&cands, cfg.beta)) {
                next.push((score + step, e.with(c.var, c.value)));
            }
        }
        if next.is_empty() {
            break;
        }
        next.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        next.truncate(cfg.beam_width);
        beam = next;
    }
    let (score, e) = beam.swap_remove(0);
    Ok((e, score))
}

pub fn beam_condition(
    model: &GraphicalModel,
    f: &dyn ScoringFunction,
    evidence: &Assignment,
    cfg: &ConditioningConfig,
) -> Result<Assignment> {
    Ok(beam_condition_scored(model, f, evidence, cfg)?.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionedSolution {
    /// Evidence after conditioning.
    pub conditioned_evidence: Assignment,
    pub decisions: usize,
    /// Full assignment: evidence, conditioned pairs and residual solution.
    pub assignment: Assignment,
    #[serde(with = "crate::ext_real::scalar")]
    pub log_score: f64,
    pub record: SolveRecord,
}

pub fn condition(
    model: &GraphicalModel,
    f: &dyn ScoringFunction,
    evidence: &Assignment,
    cfg: &ConditioningConfig,
    strategy: Strategy,
) -> Result<Assignment> {
    match strategy {
        Strategy::Greedy => greedy_condition(model, f, evidence, cfg),
        Strategy::Beam => beam_condition(model, f, evidence, cfg),
    }
}

/// Conditions, then solves the residual within the final budget using the
/// given search policies.
#[allow(clippy::too_many_arguments)]
pub fn solve_with_conditioning_using(
    model: &GraphicalModel,
    f: &dyn ScoringFunction,
    evidence: &Assignment,
    cfg: &ConditioningConfig,
    strategy: Strategy,
    opts: &SolverOptions,
    branch: &dyn BranchPolicy,
    node_sel: &dyn NodePolicy,
) -> Result<ConditionedSolution> {
    cfg.validate()?;
    let e_star = condition(model, f, evidence, cfg, strategy)?;
    let opts = SolverOptions {
        budget: Some(Duration::from_millis(cfg.final_budget_ms)),
        ..opts.clone()
    };
    let record = solve_mpe(model, &e_star, &opts, branch, node_sel)?;
    if record.status == SolveStatus::NoSolution {
        return Err(Error::NoSolution);
    }
    let assignment = record
        .assignment
        .clone()
        .expect("feasible record has an assignment");
    Ok(ConditionedSolution {
        decisions: e_star.len() - evidence.len(),
        log_score: model.log_score(&assignment)?,
        conditioned_evidence: e_star,
        assignment,
        record,
    })
}

/// [`solve_with_conditioning_using`] with the default strong-branching-lite
/// policy and bound-first child order.
pub fn solve_with_conditioning(
    model: &GraphicalModel,
    f: &dyn ScoringFunction,
    evidence: &Assignment,
    cfg: &ConditioningConfig,
    strategy: Strategy,
    opts: &SolverOptions,
) -> Result<ConditionedSolution> {
    let branch = StrongBranching::lite(model);
    solve_with_conditioning_using(
        model,
        f,
        evidence,
        cfg,
        strategy,
        opts,
        &branch,
        &BoundFirst,
    )
}

/// Branches on the network's greedy choice at every node, scored value first.
#[derive(Clone, Debug)]
pub struct NnBranching {
    pub scorer: NetworkScorer,
    pub tau: f64,
}

impl NnBranching {
    pub fn new(scorer: NetworkScorer, tau: f64, model: &GraphicalModel) -> Result<Self> {
        scorer.check(model)?;
        Ok(Self { scorer, tau })
    }
}

/// Candidates in greedy preference order, those with `ŷ ≥ tau` first.
fn greedy_order(mut cands: Vec<Candidate>, tau: f64) -> Vec<Candidate> {
    cands.sort_by(|a, b| {
        (b.opt >= tau).cmp(&(a.opt >= tau)).then_with(|| {
            if greedy_better(a, b) {
                std::cmp::Ordering::Less
            } else if greedy_better(b, a) {
                std::cmp::Ordering::Greater
            } else {
                std::cmp::Ordering::Equal
            }
        })
    });
    cands
}

impl BranchPolicy for NnBranching {
    fn name(&self) -> &str {
        match self.scorer.mode {
            HeadMode::L2cOpt => "nn-opt",
            HeadMode::L2cRank => "nn-rank",
        }
    }

    fn rank(&self, node: &NodeContext) -> Vec<(usize, u8)> {
        let cands = self
            .scorer
            .score_free(node.evidence, node.free)
            .expect("network matches the model");
        let mut seen = vec![false; node.model.num_vars()];
        greedy_order(cands, self.tau)
            .into_iter()
            .filter(|c| !std::mem::replace(&mut seen[c.var], true))
            .map(|c| (c.var, c.value))
            .collect()
    }
}

/// Orders siblings by the cumulative log optimality score of their fixed
/// pairs and warm-starts from the per-variable argmax of `ŷ`.
#[derive(Clone, Debug)]
pub struct NnNodePolicy {
    pub scorer: NetworkScorer,
}

impl NnNodePolicy {
    pub fn new(scorer: NetworkScorer, model: &GraphicalModel) -> Result<Self> {
        scorer.check(model)?;
        Ok(Self { scorer })
    }
}

impl NodePolicy for NnNodePolicy {
    fn name(&self) -> &str {
        "nn"
    }

    fn priority(&self, parent: &NodeContext, child: &ChildDescriptor) -> f64 {
        let cands = self
            .scorer
            .score_free(parent.evidence, &[child.var])
            .expect("network matches the model");
        child.parent_priority + cands[child.value as usize].opt.max(OPT_FLOOR).ln()
    }

    fn warm_start(&self, model: &GraphicalModel, evidence: &Assignment) -> Option<Assignment> {
        let cands = self.scorer.score(model, evidence).ok()?;
        let mut full = evidence.clone();
        for pair in cands.chunks(2) {
            full.insert(pair[0].var, (pair[1].opt > pair[0].opt) as u8);
        }
        Some(full)
    }
}
