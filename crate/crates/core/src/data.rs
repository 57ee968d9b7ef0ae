//! Supervision from solver traces.
//!
//! Each record draws a full sample, hides a random query set, solves the
//! resulting instance once as is and once per conditioned candidate
//! `(variable, value)`, and turns the solver statistics into a ranking
//! distribution over the candidates.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bnb::{solve_mpe, BoundFirst, SolveRecord, SolveStatus, SolverOptions, StrongBranching};
use crate::bounds::DEFAULT_I_BOUND;
use crate::error::{Error, Result};
use crate::pgm::{Assignment, GraphicalModel};
use crate::sampling::{gibbs_sample, GibbsConfig};

pub const DATASET_FORMAT: &str = "l2c-dataset";
pub const DATASET_VERSION: u32 = 1;

/// Stream reserved for the split shuffle; records use streams `0..n`.
const SPLIT_STREAM: u64 = u64::MAX;

/// Floor of the min-max normalisation of solver statistics.
pub const STAT_EPSILON: f64 = 1e-6;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct CollectionConfig {
    pub query_ratio: f64,
    /// Candidate variables solved per record.
    pub c_max: usize,
    pub budget_ms: u64,
    pub num_samples: usize,
    pub seed: u64,
    /// Weights of (time, nodes, objective regret) in the composite statistic.
    pub stat_weights: [f64; 3],
    pub temperature: f64,
    pub i_bound: usize,
    pub burn_in: usize,
    pub thinning: usize,
}

impl Default for CollectionConfig {
    fn default() -> Self {
        Self {
            query_ratio: 0.75,
            c_max: 3,
            budget_ms: 1000,
            num_samples: 100,
            seed: 0,
            stat_weights: [1.0 / 3.0; 3],
            temperature: 1.0,
            i_bound: DEFAULT_I_BOUND,
            burn_in: 500,
            thinning: 2,
        }
    }
}

/// Absolute candidate count for a fraction of the variables, at least 1.
pub fn resolve_c_max(fraction: f64, num_vars: usize) -> usize {
    ((fraction * num_vars as f64).round() as usize).max(1)
}

/// Size of the query set for `num_vars` variables.
pub fn query_size(query_ratio: f64, num_vars: usize) -> usize {
    (query_ratio * num_vars as f64).round() as usize
}

impl CollectionConfig {
    pub fn validate(&self, num_vars: usize) -> Result<()> {
        if !(self.query_ratio > 0.0 && self.query_ratio < 1.0) {
            return Err(Error::Config(format!(
                "query ratio must lie in (0, 1), got {}",
                self.query_ratio
            )));
        }
        let cap = (self.query_ratio * num_vars as f64).ceil() as usize;
        if self.c_max > cap {
            return Err(Error::Config(format!(
                "c_max {} exceeds the query size bound {cap}",
                self.c_max
            )));
        }
        if self.budget_ms == 0 {
            return Err(Error::Config("budget must be positive".into()));
        }
        if self.stat_weights.iter().any(|&w| !(w >= 0.0))
            || (self.stat_weights.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::Config(
                "stat weights must be non-negative and sum to 1".into(),
            ));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if self.i_bound == 0 {
            return Err(Error::Config("i-bound must be at least 1".into()));
        }
        self.gibbs().validate()
    }

    pub fn gibbs(&self) -> GibbsConfig {
        GibbsConfig {
            burn_in: self.burn_in,
            thinning: self.thinning,
            seed: self.seed,
        }
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            i_bound: self.i_bound,
            ..SolverOptions::with_budget(Duration::from_millis(self.budget_ms))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionedSolve {
    pub var: usize,
    pub val: u8,
    pub rec: SolveRecord,
    /// The solver timed out, so the statistics are surrogates.
    pub surrogate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub model: String,
    pub seed: u64,
    pub evidence: Assignment,
    pub base: SolveRecord,
    pub conditioned: Vec<ConditionedSolve>,
    pub rank_targets: Vec<(usize, u8, f64)>,
    pub split: Split,
}

impl TrainingRecord {
    /// Per-variable optimal values when the base solve proved optimality.
    pub fn oracle(&self) -> Option<&Assignment> {
        match self.base.status {
            SolveStatus::Optimal => self.base.assignment.as_ref(),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub model_name: String,
    pub num_vars: usize,
    pub records: Vec<TrainingRecord>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &TrainingRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }
}

/// Raw statistics of one conditioned solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RawStats {
    pub time: f64,
    pub nodes: f64,
    /// Loss of objective against the base incumbent, `inf` when infeasible.
    pub regret: f64,
}

impl RawStats {
    pub fn of(rec: &SolveRecord, base: &SolveRecord) -> Self {
        let regret = if base.log_score == f64::NEG_INFINITY {
            0.0
        } else {
            (base.log_score - rec.log_score).max(0.0)
        };
        Self {
            time: rec.wall_time_s,
            nodes: rec.nodes as f64,
            regret,
        }
    }
}

/// Min-max maps `xs` onto `[ε, 1]`; `+inf` maps to 1 and a constant column to ε.
fn min_max(xs: &[f64]) -> Vec<f64> {
    let finite = xs.iter().copied().filter(|x| x.is_finite());
    let lo = finite.clone().fold(f64::INFINITY, f64::min);
    let hi = finite.fold(f64::NEG_INFINITY, f64::max);
    xs.iter()
        .map(|&x| {
            if x == f64::INFINITY {
                1.0
            } else if hi > lo {
                STAT_EPSILON + (1.0 - STAT_EPSILON) * (x - lo) / (hi - lo)
            } else {
                STAT_EPSILON
            }
        })
        .collect()
}

/// Composite cost `t` of every candidate of one instance; smaller means the
/// candidate simplifies the instance more.
pub fn composite_stats(stats: &[RawStats], weights: [f64; 3]) -> Vec<f64> {
    let time = min_max(&stats.iter().map(|s| s.time).collect::<Vec<_>>());
    let nodes = min_max(&stats.iter().map(|s| s.nodes).collect::<Vec<_>>());
    let regret = min_max(&stats.iter().map(|s| s.regret).collect::<Vec<_>>());
    (0..stats.len())
        .map(|i| weights[0] * time[i] + weights[1] * nodes[i] + weights[2] * regret[i])
        .collect()
}

/// Softmax over `(1 / t) / temperature`.
pub fn build_rank_targets(costs: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if let Some(&t) = costs.iter().find(|&&t| !(t > 0.0)) {
        return Err(Error::Config(format!(
            "composite statistic must be positive, got {t}"
        )));
    }
    if !(temperature > 0.0) {
        return Err(Error::Config("temperature must be positive".into()));
    }
    let logits: Vec<f64> = costs.iter().map(|&t| (1.0 / t) / temperature).collect();
    let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - top).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Split tags for `n` records: validation and test each take `round(n / 14)`.
pub fn assign_splits(n: usize, seed: u64) -> Vec<Split> {
    let held = (n as f64 / 14.0).round() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SPLIT_STREAM);
    idx.shuffle(&mut rng);
    let mut out = vec![Split::Train; n];
    for (rank, &i) in idx.iter().enumerate() {
        if rank < held {
            out[i] = Split::Val;
        } else if rank < 2 * held {
            out[i] = Split::Test;
        }
    }
    out
}

fn solve(
    model: &GraphicalModel,
    evidence: &Assignment,
    opts: &SolverOptions,
) -> Result<SolveRecord> {
    let branch = StrongBranching::lite(model);
    solve_mpe(model, evidence, opts, &branch, &BoundFirst)
}

/// Builds the record for one sampled state.
pub fn collect_record(
    model: &GraphicalModel,
    cfg: &CollectionConfig,
    sample: &Assignment,
    index: u64,
) -> Result<TrainingRecord> {
    let nv = model.num_vars();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    let mut query: Vec<usize> =
        index::sample(&mut rng, nv, query_size(cfg.query_ratio, nv)).into_vec();
    query.sort_unstable();
    let evidence: Assignment = (0..nv)
        .filter(|v| query.binary_search(v).is_err())
        .map(|v| (v, sample.get(v).expect("sample is full")))
        .collect();
    let opts = cfg.solver_options();
    let base = solve(model, &evidence, &opts)?;
    let mut candidates: Vec<usize> =
        index::sample(&mut rng, query.len(), cfg.c_max.min(query.len()))
            .into_iter()
            .map(|j| query[j])
            .collect();
    candidates.sort_unstable();
    let mut conditioned = Vec::with_capacity(2 * candidates.len());
    for &var in &candidates {
        for val in [0u8, 1] {
            let rec = solve(model, &evidence.with(var, val), &opts)?;
            conditioned.push(ConditionedSolve {
                var,
                val,
                surrogate: rec.status == SolveStatus::FeasibleTimeout,
                rec,
            });
        }
    }
    let stats: Vec<RawStats> = conditioned
        .iter()
        .map(|c| RawStats::of(&c.rec, &base))
        .collect();
    let costs = composite_stats(&stats, cfg.stat_weights);
    let probs = if costs.is_empty() {
        Vec::new()
    } else {
        build_rank_targets(&costs, cfg.temperature)?
    };
    let rank_targets = conditioned
        .iter()
        .zip(probs)
        .map(|(c, p)| (c.var, c.val, p))
        .collect();
    Ok(TrainingRecord {
        model: model.name().to_string(),
        seed: cfg.seed,
        evidence,
        base,
        conditioned,
        rank_targets,
        split: Split::Train,
    })
}

/// Runs the whole collection loop.
pub fn collect(model: &GraphicalModel, cfg: &CollectionConfig) -> Result<Dataset> {
    cfg.validate(model.num_vars())?;
    let samples = gibbs_sample(model, cfg.num_samples, &cfg.gibbs())?;
    let splits = assign_splits(cfg.num_samples, cfg.seed);
    let mut records = Vec::with_capacity(cfg.num_samples);
    for (i, (x, split)) in samples.iter().zip(splits).enumerate() {
        let mut rec = collect_record(model, cfg, x, i as u64)?;
        rec.split = split;
        records.push(rec);
    }
    Ok(Dataset {
        model_name: model.name().to_string(),
        num_vars: model.num_vars(),
        records,
    })
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    model: String,
    num_vars: usize,
}

pub fn write_dataset(ds: &Dataset, out: impl Write) -> Result<()> {
    let mut out = BufWriter::new(out);
    let header = Header {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        model: ds.model_name.clone(),
        num_vars: ds.num_vars,
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for rec in &ds.records {
        serde_json::to_writer(&mut out, rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_dataset(input: impl BufRead) -> Result<Dataset> {
    let mut lines = input.lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Schema("empty dataset file".into()))??;
    let header: Header = serde_json::from_str(&first)
        .map_err(|e| Error::Schema(format!("bad dataset header: {e}")))?;
    if header.format != DATASET_FORMAT {
        return Err(Error::Schema(format!(
            "not a dataset file (format {:?})",
            header.format
        )));
    }
    if header.version != DATASET_VERSION {
        return Err(Error::Version {
            found: header.version,
            expected: DATASET_VERSION,
        });
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TrainingRecord =
            serde_json::from_str(&line).map_err(|e| Error::Schema(format!("record {i}: {e}")))?;
        rec.evidence
            .validate(header.num_vars)
            .map_err(|e| Error::Schema(format!("record {i}: {e}")))?;
        records.push(rec);
    }
    Ok(Dataset {
        model_name: header.model,
        num_vars: header.num_vars,
        records,
    })
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    write_dataset(ds, File::create(path)?)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    read_dataset(BufReader::new(file))
}
