//! Seeded random binary models for experiments and tests.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::pgm::{GraphicalModel, LogPotential};

#[derive(Clone, Debug)]
pub struct RandomModelConfig {
    pub num_vars: usize,
    /// Give every variable a unary factor.
    pub unary: bool,
    pub pairwise: usize,
    pub ternary: usize,
    /// Standard deviation of the log-potential entries.
    pub scale: f64,
    /// Probability that an entry is `-inf`; each table keeps at least one finite entry.
    pub zero_prob: f64,
}

impl RandomModelConfig {
    /// Mixed unary/pairwise/ternary model with roughly `1.5 n` pairwise and
    /// `n / 4` ternary factors.
    pub fn mixed(num_vars: usize) -> Self {
        Self {
            num_vars,
            unary: true,
            pairwise: num_vars + num_vars / 2,
            ternary: num_vars / 4,
            scale: 1.0,
            zero_prob: 0.0,
        }
    }
}

fn random_table(rng: &mut ChaCha8Rng, arity: usize, scale: f64, zero_prob: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, scale).expect("scale must be positive");
    let mut table: Vec<f64> = (0..1usize << arity).map(|_| normal.sample(rng)).collect();
    if zero_prob > 0.0 {
        let keep = rng.random_range(0..table.len());
        for (k, t) in table.iter_mut().enumerate() {
            if k != keep && rng.random_bool(zero_prob) {
                *t = f64::NEG_INFINITY;
            }
        }
    }
    table
}

pub fn random_model(cfg: &RandomModelConfig, seed: u64) -> GraphicalModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.num_vars;
    let mut factors = Vec::new();
    if cfg.unary {
        for v in 0..n {
            let t = random_table(&mut rng, 1, cfg.scale, cfg.zero_prob);
            factors.push(LogPotential::new(vec![v], t).unwrap());
        }
    }
    for (count, arity) in [(cfg.pairwise, 2), (cfg.ternary, 3)] {
        if n < arity {
            continue;
        }
        for _ in 0..count {
            let scope: Vec<usize> = sample(&mut rng, n, arity).into_iter().collect();
            let t = random_table(&mut rng, arity, cfg.scale, cfg.zero_prob);
            factors.push(LogPotential::new(scope, t).unwrap());
        }
    }
    GraphicalModel::new(format!("random-{n}-{seed}"), n, factors).unwrap()
}

/// Chain `0 - 1 - ... - (n-1)` with random unary and pairwise factors.
pub fn random_chain(num_vars: usize, seed: u64) -> GraphicalModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut factors = Vec::new();
    for v in 0..num_vars {
        factors.push(LogPotential::new(vec![v], random_table(&mut rng, 1, 1.0, 0.0)).unwrap());
    }
    for v in 1..num_vars {
        factors
            .push(LogPotential::new(vec![v - 1, v], random_table(&mut rng, 2, 1.0, 0.0)).unwrap());
    }
    GraphicalModel::new(format!("chain-{num_vars}-{seed}"), num_vars, factors).unwrap()
}

/// `rows x cols` grid with random unary and pairwise factors.
pub fn random_grid(rows: usize, cols: usize, seed: u64) -> GraphicalModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rows * cols;
    let mut factors = Vec::new();
    for v in 0..n {
        factors.push(LogPotential::new(vec![v], random_table(&mut rng, 1, 1.0, 0.0)).unwrap());
    }
    for r in 0..rows {
        for c in 0..cols {
            let v = r * cols + c;
            if c + 1 < cols {
                factors.push(
                    LogPotential::new(vec![v, v + 1], random_table(&mut rng, 2, 1.0, 0.0)).unwrap(),
                );
            }
            if r + 1 < rows {
                factors.push(
                    LogPotential::new(vec![v, v + cols], random_table(&mut rng, 2, 1.0, 0.0))
                        .unwrap(),
                );
            }
        }
    }
    GraphicalModel::new(format!("grid-{rows}x{cols}-{seed}"), n, factors).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_models_are_reproducible() {
        let cfg = RandomModelConfig::mixed(10);
        assert_eq!(random_model(&cfg, 7), random_model(&cfg, 7));
        assert_ne!(random_model(&cfg, 7), random_model(&cfg, 8));
    }

    #[test]
    fn zero_entries_keep_a_finite_one() {
        let cfg = RandomModelConfig {
            zero_prob: 0.9,
            ..RandomModelConfig::mixed(8)
        };
        let m = random_model(&cfg, 3);
        assert!(m.factors().iter().all(|f| f.max_entry().is_finite()));
        assert!(m
            .factors()
            .iter()
            .any(|f| f.table().contains(&f64::NEG_INFINITY)));
    }
}
