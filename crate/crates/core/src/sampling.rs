//! Systematic-scan Gibbs sampling.
//!
//! Randomness is drawn from a counter-based generator keyed by
//! `(seed, sweep, site)`, so a chain is reproducible from its configuration
//! alone and independent chains never share state.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pgm::{Assignment, GraphicalModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GibbsConfig {
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self {
            burn_in: 500,
            thinning: 2,
            seed: 0,
        }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thinning == 0 {
            return Err(Error::Config("Gibbs thinning must be at least 1".into()));
        }
        Ok(())
    }
}

const INIT_SWEEP: u64 = u64::MAX;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform draw in `[0, 1)` determined by `(seed, sweep, site)`.
#[inline]
pub fn counter_uniform(seed: u64, sweep: u64, site: u64) -> f64 {
    let h = splitmix64(splitmix64(splitmix64(seed) ^ sweep) ^ site);
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn conditional_dense(model: &GraphicalModel, values: &[u8], var: usize) -> f64 {
    let mut one = 0.0;
    let mut zero = 0.0;
    for &fi in model.factors_of(var) {
        let f = &model.factors()[fi];
        one += f.value_with(values, var, 1);
        zero += f.value_with(values, var, 0);
    }
    match (zero == f64::NEG_INFINITY, one == f64::NEG_INFINITY) {
        (true, true) => 0.5,
        (true, false) => 1.0,
        (false, true) => 0.0,
        (false, false) => sigmoid(one - zero),
    }
}

/// `P(var = 1 | all other variables)` under `model`.
///
/// `state` must assign every variable except possibly `var`.
pub fn gibbs_conditional(model: &GraphicalModel, state: &Assignment, var: usize) -> Result<f64> {
    state.validate(model.num_vars())?;
    let mut values = vec![0u8; model.num_vars()];
    for (v, slot) in values.iter_mut().enumerate() {
        match state.get(v) {
            Some(x) => *slot = x,
            None if v == var => {}
            None => return Err(Error::IncompleteAssignment(v)),
        }
    }
    Ok(conditional_dense(model, &values, var))
}

/// Runs one chain with `evidence` clamped, handing each kept state to `keep`.
fn run_chain(
    model: &GraphicalModel,
    evidence: &[Option<u8>],
    n: usize,
    cfg: &GibbsConfig,
    mut keep: impl FnMut(&[u8]),
) {
    let nv = model.num_vars();
    let mut values: Vec<u8> = (0..nv)
        .map(|v| {
            evidence[v]
                .unwrap_or_else(|| (counter_uniform(cfg.seed, INIT_SWEEP, v as u64) < 0.5) as u8)
        })
        .collect();
    let free: Vec<usize> = (0..nv).filter(|&v| evidence[v].is_none()).collect();
    let total = cfg.burn_in + n * cfg.thinning;
    for sweep in 0..total {
        for &v in &free {
            let p1 = conditional_dense(model, &values, v);
            let u = counter_uniform(cfg.seed, sweep as u64, v as u64);
            values[v] = (u < p1) as u8;
        }
        let past = sweep + 1;
        if past > cfg.burn_in && (past - cfg.burn_in).is_multiple_of(cfg.thinning) {
            keep(&values);
        }
    }
}

/// Draws `n` full assignments from `model` with one systematic-scan chain.
pub fn gibbs_sample(
    model: &GraphicalModel,
    n: usize,
    cfg: &GibbsConfig,
) -> Result<Vec<Assignment>> {
    gibbs_sample_conditioned(model, &Assignment::new(), n, cfg)
}

/// Like [`gibbs_sample`] with the variables of `evidence` clamped.
pub fn gibbs_sample_conditioned(
    model: &GraphicalModel,
    evidence: &Assignment,
    n: usize,
    cfg: &GibbsConfig,
) -> Result<Vec<Assignment>> {
    cfg.validate()?;
    evidence.validate(model.num_vars())?;
    let mut out = Vec::with_capacity(n);
    run_chain(model, &evidence.to_dense(model.num_vars()), n, cfg, |x| {
        out.push(Assignment::from_dense(x))
    });
    Ok(out)
}

/// Fraction of samples with each variable set to 1.
pub fn empirical_marginals(
    model: &GraphicalModel,
    n: usize,
    cfg: &GibbsConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let nv = model.num_vars();
    let mut ones = vec![0usize; nv];
    run_chain(model, &vec![None; nv], n, cfg, |x| {
        for (c, &b) in ones.iter_mut().zip(x) {
            *c += b as usize;
        }
    });
    Ok(ones.iter().map(|&c| c as f64 / n.max(1) as f64).collect())
}

#[inline]
fn majority(ones: usize, n: usize) -> u8 {
    (2 * ones > n) as u8
}

/// Majority value of each free variable over `n` conditioned samples.
///
/// A variable set to 1 in exactly half of the samples gets 0.
pub fn estimate_mode_values(
    model: &GraphicalModel,
    evidence: &Assignment,
    n: usize,
    cfg: &GibbsConfig,
) -> Result<Assignment> {
    cfg.validate()?;
    evidence.validate(model.num_vars())?;
    let nv = model.num_vars();
    let dense = evidence.to_dense(nv);
    let mut ones = vec![0usize; nv];
    run_chain(model, &dense, n, cfg, |x| {
        for (c, &b) in ones.iter_mut().zip(x) {
            *c += b as usize;
        }
    });
    Ok((0..nv)
        .filter(|&v| dense[v].is_none())
        .map(|v| (v, majority(ones[v], n)))
        .collect())
}
