//! Optimality and ranking losses with their gradients.

use crate::error::{Error, Result};

pub const PROB_CLAMP: f64 = 1e-7;

/// Summed binary cross-entropy of `probs` against `labels`.
pub fn loss_opt(probs: &[f64], labels: &[f64]) -> f64 {
    probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum()
}

/// Gradient of [`loss_opt`] with respect to the pre-sigmoid logits.
pub fn loss_opt_grad_logits(probs: &[f64], labels: &[f64]) -> Vec<f64> {
    probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
                return 0.0;
            }
            let dp = -y / p + (1.0 - y) / (1.0 - p);
            dp * p * (1.0 - p)
        })
        .collect()
}

/// Softmax of `scores` restricted to `mask`.
pub fn masked_softmax(scores: &[f64], mask: &[usize]) -> Vec<f64> {
    let top = mask
        .iter()
        .map(|&j| scores[j])
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = mask.iter().map(|&j| (scores[j] - top).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// `−Σ p ln p̂` over the masked candidates, with `targets[i]` belonging to
/// `mask[i]`.
pub fn loss_rank(scores: &[f64], targets: &[f64], mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::Config("ranking loss needs a non-empty mask".into()));
    }
    let top = mask
        .iter()
        .map(|&j| scores[j])
        .fold(f64::NEG_INFINITY, f64::max);
    let log_z = top
        + mask
            .iter()
            .map(|&j| (scores[j] - top).exp())
            .sum::<f64>()
            .ln();
    Ok(mask
        .iter()
        .zip(targets)
        .map(|(&j, &p)| -p * (scores[j] - log_z))
        .sum())
}

/// Gradient of [`loss_rank`] over all candidates; zero outside the mask.
pub fn loss_rank_grad(scores: &[f64], targets: &[f64], mask: &[usize]) -> Vec<f64> {
    let mut g = vec![0.0; scores.len()];
    if mask.is_empty() {
        return g;
    }
    let total: f64 = targets.iter().sum();
    for ((&j, &p), q) in mask.iter().zip(targets).zip(masked_softmax(scores, mask)) {
        g[j] = q * total - p;
    }
    g
}
