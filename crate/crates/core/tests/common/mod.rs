//! Independent reference implementations used by the integration tests.
//!
//! Nothing here calls into the library's inference code: scores are summed
//! from raw factor tables and every quantity is obtained by enumeration.
#![allow(dead_code)]

use l2c::generate::{random_model, RandomModelConfig};
use l2c::{Assignment, GraphicalModel};

/// Log-score of a dense assignment from the raw tables (first scope variable
/// is the most significant bit).
pub fn table_score(model: &GraphicalModel, x: &[u8]) -> f64 {
    model
        .factors()
        .iter()
        .map(|f| {
            let idx = f
                .scope()
                .iter()
                .fold(0usize, |acc, &v| (acc << 1) | x[v] as usize);
            f.table()[idx]
        })
        .sum()
}

/// Every dense assignment consistent with `evidence`, in lexicographic order.
pub fn completions(n: usize, evidence: &Assignment) -> Vec<Vec<u8>> {
    (0..1usize << n)
        .map(|bits| {
            (0..n)
                .map(|v| ((bits >> (n - 1 - v)) & 1) as u8)
                .collect::<Vec<u8>>()
        })
        .filter(|x| evidence.iter().all(|(v, val)| x[v] == val))
        .collect()
}

/// Lexicographically smallest maximizer and its score.
pub fn enumerate_mpe(model: &GraphicalModel, evidence: &Assignment) -> (Vec<u8>, f64) {
    let mut best: Option<(Vec<u8>, f64)> = None;
    for x in completions(model.num_vars(), evidence) {
        let s = table_score(model, &x);
        if best.as_ref().is_none_or(|(_, b)| s > *b) {
            best = Some((x, s));
        }
    }
    best.expect("at least one completion")
}

/// Exact `P(x_v = 1)` for every variable.
pub fn exact_marginals(model: &GraphicalModel) -> Vec<f64> {
    let n = model.num_vars();
    let all = completions(n, &Assignment::new());
    let scores: Vec<f64> = all.iter().map(|x| table_score(model, x)).collect();
    let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
    let z: f64 = weights.iter().sum();
    (0..n)
        .map(|v| {
            all.iter()
                .zip(&weights)
                .filter(|(x, _)| x[v] == 1)
                .map(|(_, w)| w)
                .sum::<f64>()
                / z
        })
        .collect()
}

/// Mixed unary/pairwise/ternary model with `8..=16` variables.
pub fn corpus_model(seed: u64) -> GraphicalModel {
    random_model(&RandomModelConfig::mixed(8 + (seed % 9) as usize), seed)
}

/// Evidence on roughly a quarter of the variables, derived from `seed`.
pub fn corpus_evidence(model: &GraphicalModel, seed: u64) -> Assignment {
    let n = model.num_vars() as u64;
    let mut state = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ 0xd1b5_4a32_d192_ed03;
    let mut next = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    let k = (n / 4) as usize;
    let mut ev = Assignment::new();
    while ev.len() < k {
        let v = (next() % n) as usize;
        let val = (next() & 1) as u8;
        if !ev.contains(v) {
            ev.insert(v, val);
        }
    }
    ev
}

pub fn assert_close(a: f64, b: f64, tol: f64) {
    assert!(
        (a == b) || (a - b).abs() <= tol,
        "{a} and {b} differ by more than {tol}"
    );
}

/// Network whose optimality head is ~1 on the pairs of `target` and ~0 on
/// the opposite values, with a constant simplification head.
pub fn planted_network(num_vars: usize, target: &Assignment) -> l2c::scorer::ScorerNetwork {
    use l2c::scorer::{Hyper, ScorerNetwork};
    let hyper = Hyper {
        d: 2,
        heads: 1,
        attn_layers: 1,
        blocks: 1,
        hidden: 2,
        dropout: 0.0,
    };
    let mut net = ScorerNetwork::zeros(num_vars, hyper).unwrap();
    for v in 0..num_vars {
        for x in 0..2u8 {
            let hit = target.get(v) == Some(x);
            let row = 2 * (2 * v + x as usize);
            net.value_embeddings.data[row] = hit as u8 as f64;
            net.value_embeddings.data[row + 1] = (!hit) as u8 as f64;
        }
    }
    // Block 0 projects the candidate half of [context, candidate] through.
    let proj = net.blocks[0].proj.as_mut().unwrap();
    proj.w.data[2 * 2] = 1.0;
    proj.w.data[3 * 2 + 1] = 1.0;
    let head = &mut net.opt_head;
    head.fc1.w.data = vec![1.0, 0.0, 0.0, 1.0];
    head.fc2.w.data = vec![12.0, -12.0];
    net
}
