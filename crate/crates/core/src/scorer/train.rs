//! Instances, the joint loss, Adam and the training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{loss_opt, loss_opt_grad_logits, loss_rank, loss_rank_grad};
use super::network::{backward, build_tokens, forward, forward_with_cache, ScorerNetwork, Tokens};
use crate::data::{Dataset, Split, TrainingRecord};
use crate::error::{Error, Result};
use crate::pgm::Assignment;

/// One supervised instance in candidate order.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub evidence: Assignment,
    pub free: Vec<usize>,
    /// Optimality label per candidate, when the base solve was exact.
    pub labels: Option<Vec<f64>>,
    /// Candidates covered by the ranking loss.
    pub rank_mask: Vec<usize>,
    /// Target probability of each masked candidate.
    pub rank_targets: Vec<f64>,
}

impl Instance {
    pub fn from_record(rec: &TrainingRecord, num_vars: usize) -> Result<Self> {
        rec.evidence.validate(num_vars)?;
        let free: Vec<usize> = (0..num_vars)
            .filter(|&v| !rec.evidence.contains(v))
            .collect();
        let pos = |v: usize| {
            free.binary_search(&v)
                .map_err(|_| Error::Schema(format!("candidate variable {v} is not free")))
        };
        let labels = match rec.oracle() {
            Some(opt) => {
                let mut y = Vec::with_capacity(2 * free.len());
                for &v in &free {
                    let x = opt.get(v).ok_or_else(|| {
                        Error::Schema(format!("oracle assignment misses variable {v}"))
                    })?;
                    y.extend([(x == 0) as u8 as f64, (x == 1) as u8 as f64]);
                }
                Some(y)
            }
            None => None,
        };
        let mut rank_mask = Vec::with_capacity(rec.rank_targets.len());
        let mut rank_targets = Vec::with_capacity(rec.rank_targets.len());
        for &(v, x, p) in &rec.rank_targets {
            rank_mask.push(2 * pos(v)? + x as usize);
            rank_targets.push(p);
        }
        Ok(Self {
            evidence: rec.evidence.clone(),
            free,
            labels,
            rank_mask,
            rank_targets,
        })
    }

    pub fn is_supervised(&self) -> bool {
        self.labels.is_some() || !self.rank_mask.is_empty()
    }

    pub fn tokens(&self, net: &ScorerNetwork) -> Result<Tokens> {
        build_tokens(net, &self.evidence, &self.free)
    }
}

/// Supervised instances of one split.
pub fn instances(ds: &Dataset, split: Split) -> Result<Vec<Instance>> {
    let mut out = Vec::new();
    for rec in ds.split(split) {
        let inst = Instance::from_record(rec, ds.num_vars)?;
        if inst.is_supervised() {
            out.push(inst);
        }
    }
    Ok(out)
}

/// Joint loss from network outputs, with the gradients with respect to the
/// optimality logits and the simplification scores.
fn joint_loss(
    opt: &[f64],
    simp: &[f64],
    inst: &Instance,
    lambda_opt: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if !inst.is_supervised() {
        return Err(Error::NoSupervision);
    }
    let mut loss = 0.0;
    let mut d_opt = vec![0.0; opt.len()];
    let mut d_simp = vec![0.0; simp.len()];
    if let Some(y) = &inst.labels {
        loss += lambda_opt * loss_opt(opt, y);
        for (d, g) in d_opt.iter_mut().zip(loss_opt_grad_logits(opt, y)) {
            *d = lambda_opt * g;
        }
    }
    if !inst.rank_mask.is_empty() {
        let w = 1.0 - lambda_opt;
        loss += w * loss_rank(simp, &inst.rank_targets, &inst.rank_mask)?;
        for (d, g) in
            d_simp
                .iter_mut()
                .zip(loss_rank_grad(simp, &inst.rank_targets, &inst.rank_mask))
        {
            *d = w * g;
        }
    }
    Ok((loss, d_opt, d_simp))
}

/// `λ·L_opt + (1−λ)·L_rank`, each term dropped when its supervision is absent.
pub fn loss_total(net: &ScorerNetwork, inst: &Instance, lambda_opt: f64) -> Result<f64> {
    let out = forward(net, &inst.tokens(net)?);
    Ok(joint_loss(&out.opt, &out.simp, inst, lambda_opt)?.0)
}

/// Loss of one instance; adds `weight ×` its gradient to `grads`. Dropout is
/// active when `rng` is given.
pub fn loss_and_grad(
    net: &ScorerNetwork,
    inst: &Instance,
    lambda_opt: f64,
    rng: Option<&mut ChaCha8Rng>,
    weight: f64,
    grads: &mut ScorerNetwork,
) -> Result<f64> {
    let tokens = inst.tokens(net)?;
    let (out, cache) = forward_with_cache(net, &tokens, rng);
    let (loss, mut d_opt, mut d_simp) = joint_loss(&out.opt, &out.simp, inst, lambda_opt)?;
    d_opt
        .iter_mut()
        .chain(d_simp.iter_mut())
        .for_each(|g| *g *= weight);
    backward(net, &tokens, &cache, &d_opt, &d_simp, grads);
    Ok(loss)
}

/// Adam over a fixed list of parameter slices.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

impl Adam {
    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>, lr: f64) {
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            for (((x, &gi), m), v) in p.iter_mut().zip(g).zip(&mut self.m[k]).zip(&mut self.v[k]) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * gi;
                *v = self.beta2 * *v + (1.0 - self.beta2) * gi * gi;
                *x -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
    }

    pub fn step_network(&mut self, net: &mut ScorerNetwork, grads: &ScorerNetwork, lr: f64) {
        let g: Vec<&[f64]> = grads
            .params()
            .into_iter()
            .map(|(_, t)| t.data.as_slice())
            .collect();
        let p: Vec<&mut [f64]> = net
            .params_mut()
            .into_iter()
            .map(|(_, t)| t.data.as_mut_slice())
            .collect();
        self.step(p, g, lr);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub lr_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Weight of the optimality loss; the ranking loss gets `1 − lambda_opt`.
    pub lambda_opt: f64,
    pub seed: u64,
    pub dropout_enabled: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 8e-4,
            lr_decay: 0.97,
            batch_size: 128,
            max_epochs: 50,
            patience: 5,
            lambda_opt: 0.4,
            seed: 0,
            dropout_enabled: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_opt) {
            return Err(Error::Config(format!(
                "lambda_opt {} outside [0, 1]",
                self.lambda_opt
            )));
        }
        if self.batch_size == 0 || !(self.lr > 0.0) || !(self.lr_decay > 0.0) {
            return Err(Error::Config(
                "batch size, learning rate and decay must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi(epoch as i32)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Validation loss of the initial network.
    pub initial_val_loss: f64,
    pub history: Vec<EpochStats>,
    pub best_epoch: Option<usize>,
}

pub fn mean_loss(net: &ScorerNetwork, set: &[Instance], lambda_opt: f64) -> Result<f64> {
    let mut total = 0.0;
    for (i, inst) in set.iter().enumerate() {
        let l = loss_total(net, inst, lambda_opt)?;
        if !l.is_finite() {
            return Err(Error::NonFiniteLoss { instance: i });
        }
        total += l;
    }
    Ok(total / set.len().max(1) as f64)
}

/// One Adam step on the mean loss of `batch`; returns that loss.
pub fn train_step(
    net: &mut ScorerNetwork,
    batch: &[&Instance],
    cfg: &TrainConfig,
    adam: &mut Adam,
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut grads = net.zeros_like();
    let w = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for (i, inst) in batch.iter().enumerate() {
        let dropout = cfg.dropout_enabled.then_some(&mut *rng);
        let l = loss_and_grad(net, inst, cfg.lambda_opt, dropout, w, &mut grads)?;
        if !l.is_finite() {
            return Err(Error::NonFiniteLoss { instance: i });
        }
        total += l;
    }
    adam.step_network(net, &grads, lr);
    Ok(total * w)
}

/// Mini-batch training with early stopping on validation loss. Returns the
/// network of the best validation epoch. Without a validation split the
/// training split is used for model selection.
pub fn train(
    ds: &Dataset,
    init: ScorerNetwork,
    cfg: &TrainConfig,
) -> Result<(ScorerNetwork, TrainReport)> {
    cfg.validate()?;
    if ds.num_vars != init.num_vars {
        return Err(Error::Shape(format!(
            "network has {} variables but the dataset has {}",
            init.num_vars, ds.num_vars
        )));
    }
    let train_set = instances(ds, Split::Train)?;
    if train_set.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let mut val_set = instances(ds, Split::Val)?;
    if val_set.is_empty() {
        val_set = train_set.clone();
    }
    let mut net = init;
    let mut best = net.clone();
    let initial_val_loss = mean_loss(&net, &val_set, cfg.lambda_opt)?;
    let mut best_loss = initial_val_loss;
    let mut best_epoch = None;
    let mut stale = 0;
    let mut adam = Adam::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    for epoch in 0..cfg.max_epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Instance> = chunk.iter().map(|&i| &train_set[i]).collect();
            sum += train_step(&mut net, &batch, cfg, &mut adam, lr, &mut rng)?;
            batches += 1;
        }
        let val_loss = mean_loss(&net, &val_set, cfg.lambda_opt)?;
        history.push(EpochStats {
            epoch,
            lr,
            train_loss: sum / batches as f64,
            val_loss,
        });
        if val_loss < best_loss {
            best_loss = val_loss;
            best = net.clone();
            best_epoch = Some(epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok((
        best,
        TrainReport {
            initial_val_loss,
            history,
            best_epoch,
        },
    ))
}

/// Fraction of labelled candidates where `ŷ ≥ 0.5` agrees with the label.
pub fn opt_accuracy(net: &ScorerNetwork, set: &[Instance]) -> Result<f64> {
    let mut hit = 0usize;
    let mut total = 0usize;
    for inst in set {
        let Some(y) = &inst.labels else { continue };
        let out = forward(net, &inst.tokens(net)?);
        for (&p, &l) in out.opt.iter().zip(y) {
            hit += ((p >= 0.5) == (l >= 0.5)) as usize;
            total += 1;
        }
    }
    Ok(hit as f64 / total.max(1) as f64)
}

/// Central finite differences against the analytic gradient, per tensor.
///
/// Returns the largest relative error `|g_a − g_fd| / max(1e-8, |g_a| + |g_fd|)`
/// within each parameter tensor. Dropout is off.
pub fn grad_check_tensors(
    net: &ScorerNetwork,
    inst: &Instance,
    lambda_opt: f64,
    h: f64,
) -> Result<Vec<(String, f64)>> {
    let mut analytic = net.zeros_like();
    loss_and_grad(net, inst, lambda_opt, None, 1.0, &mut analytic)?;
    let mut probe = net.clone();
    let names: Vec<String> = net.params().into_iter().map(|(n, _)| n).collect();
    let mut out = Vec::with_capacity(names.len());
    for (k, name) in names.iter().enumerate() {
        let ga = analytic.params()[k].1.data.clone();
        let mut worst: f64 = 0.0;
        for (i, &g) in ga.iter().enumerate() {
            let orig = probe.params()[k].1.data[i];
            probe.params_mut()[k].1.data[i] = orig + h;
            let up = loss_total(&probe, inst, lambda_opt)?;
            probe.params_mut()[k].1.data[i] = orig - h;
            let down = loss_total(&probe, inst, lambda_opt)?;
            probe.params_mut()[k].1.data[i] = orig;
            let fd = (up - down) / (2.0 * h);
            worst = worst.max((g - fd).abs() / (g.abs() + fd.abs()).max(1e-8));
        }
        out.push((name.clone(), worst));
    }
    Ok(out)
}

pub fn grad_check(net: &ScorerNetwork, inst: &Instance, lambda_opt: f64, h: f64) -> Result<f64> {
    Ok(grad_check_tensors(net, inst, lambda_opt, h)?
        .into_iter()
        .fold(0.0, |m, (_, e)| m.max(e)))
}
