//! The dual-head attention scorer and its reverse-mode gradients.
//!
//! Each candidate pair `(Q_i = q)` is a token that attends over the evidence
//! tokens. The attended representation is concatenated with the original
//! token, passed through a residual MLP encoder and read out by an
//! optimality head (probability) and a simplification head (raw score).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::tensor::{matmul, matmul_a_bt, matmul_at_b, Tensor};
use crate::error::{Error, Result};
use crate::pgm::Assignment;

pub const STATUS_OBSERVED: usize = 0;
pub const STATUS_UNOBSERVED: usize = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyper {
    pub d: usize,
    pub heads: usize,
    pub attn_layers: usize,
    pub blocks: usize,
    /// Width of every hidden dense layer.
    pub hidden: usize,
    pub dropout: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            d: 32,
            heads: 2,
            attn_layers: 2,
            blocks: 3,
            hidden: 512,
            dropout: 0.1,
        }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "embedding width {} must be a positive multiple of the head count {}",
                self.d, self.heads
            )));
        }
        if self.blocks == 0 || self.hidden == 0 {
            return Err(Error::Config(
                "the encoder needs at least one block and hidden unit".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `[in, out]`
    pub w: Tensor,
    pub b: Option<Tensor>,
}

impl Linear {
    fn zeros(input: usize, output: usize, bias: bool) -> Self {
        Self {
            w: Tensor::zeros(&[input, output]),
            b: bias.then(|| Tensor::zeros(&[output])),
        }
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        let mut y = matmul(x, &self.w);
        if let Some(b) = &self.b {
            for i in 0..y.rows() {
                for (v, bb) in y.row_mut(i).iter_mut().zip(&b.data) {
                    *v += bb;
                }
            }
        }
        y
    }

    /// Accumulates parameter gradients into `g`, returns the input gradient.
    fn backward(&self, x: &Tensor, dy: &Tensor, g: &mut Linear) -> Tensor {
        g.w.add_assign(&matmul_at_b(x, dy));
        if let Some(gb) = &mut g.b {
            for i in 0..dy.rows() {
                for (a, v) in gb.data.iter_mut().zip(dy.row(i)) {
                    *a += v;
                }
            }
        }
        matmul_a_bt(dy, &self.w)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionLayer {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderBlock {
    pub fc1: Linear,
    pub fc2: Linear,
    /// Skip projection of the concatenated input; first block only.
    pub proj: Option<Linear>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScorerNetwork {
    pub hyper: Hyper,
    pub num_vars: usize,
    /// `[2·num_vars, d]`, row `2i + v` embeds `X_i = v`.
    pub value_embeddings: Tensor,
    /// `[2, d]`, observed then unobserved.
    pub status_embeddings: Tensor,
    pub attention: Vec<AttentionLayer>,
    pub blocks: Vec<EncoderBlock>,
    pub opt_head: Head,
    pub simp_head: Head,
}

impl ScorerNetwork {
    /// A network with every parameter zero.
    pub fn zeros(num_vars: usize, hyper: Hyper) -> Result<Self> {
        hyper.validate()?;
        let (d, h) = (hyper.d, hyper.hidden);
        // Every use of the simplification score is invariant to a common
        // shift, so that head has no output bias.
        let head = |out_bias| Head {
            fc1: Linear::zeros(d, h, true),
            fc2: Linear::zeros(h, 1, out_bias),
        };
        Ok(Self {
            num_vars,
            value_embeddings: Tensor::zeros(&[2 * num_vars, d]),
            status_embeddings: Tensor::zeros(&[2, d]),
            attention: (0..hyper.attn_layers)
                .map(|_| AttentionLayer {
                    wq: Linear::zeros(d, d, false),
                    wk: Linear::zeros(d, d, false),
                    wv: Linear::zeros(d, d, false),
                    wo: Linear::zeros(d, d, false),
                })
                .collect(),
            blocks: (0..hyper.blocks)
                .map(|i| {
                    let input = if i == 0 { 2 * d } else { d };
                    EncoderBlock {
                        fc1: Linear::zeros(input, h, true),
                        fc2: Linear::zeros(h, d, true),
                        proj: (i == 0).then(|| Linear::zeros(input, d, false)),
                    }
                })
                .collect(),
            opt_head: head(true),
            simp_head: head(false),
            hyper,
        })
    }

    /// Seeded initialisation: unit-normal embeddings, weights uniform in
    /// `±1/√fan_in`, zero biases.
    pub fn new(num_vars: usize, hyper: Hyper, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(num_vars, hyper)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        for (name, t) in net.params_mut() {
            if name.ends_with(".b") {
                continue;
            }
            if name.ends_with("embeddings") {
                t.data.iter_mut().for_each(|x| *x = normal.sample(&mut rng));
            } else {
                let a = 1.0 / (t.rows() as f64).sqrt();
                let u = Uniform::new_inclusive(-a, a).expect("finite range");
                t.data.iter_mut().for_each(|x| *x = u.sample(&mut rng));
            }
        }
        Ok(net)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.num_vars, self.hyper.clone()).expect("hyper already validated")
    }

    /// Every parameter tensor with a stable dotted name.
    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("value_embeddings".into(), &self.value_embeddings),
            ("status_embeddings".into(), &self.status_embeddings),
        ];
        fn lin<'a>(out: &mut Vec<(String, &'a Tensor)>, name: String, l: &'a Linear) {
            out.push((format!("{name}.w"), &l.w));
            if let Some(b) = &l.b {
                out.push((format!("{name}.b"), b));
            }
        }
        for (i, a) in self.attention.iter().enumerate() {
            lin(&mut out, format!("attention.{i}.wq"), &a.wq);
            lin(&mut out, format!("attention.{i}.wk"), &a.wk);
            lin(&mut out, format!("attention.{i}.wv"), &a.wv);
            lin(&mut out, format!("attention.{i}.wo"), &a.wo);
        }
        for (i, b) in self.blocks.iter().enumerate() {
            lin(&mut out, format!("blocks.{i}.fc1"), &b.fc1);
            lin(&mut out, format!("blocks.{i}.fc2"), &b.fc2);
            if let Some(p) = &b.proj {
                lin(&mut out, format!("blocks.{i}.proj"), p);
            }
        }
        for (name, h) in [("opt_head", &self.opt_head), ("simp_head", &self.simp_head)] {
            lin(&mut out, format!("{name}.fc1"), &h.fc1);
            lin(&mut out, format!("{name}.fc2"), &h.fc2);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![
            ("value_embeddings".into(), &mut self.value_embeddings),
            ("status_embeddings".into(), &mut self.status_embeddings),
        ];
        fn lin<'a>(out: &mut Vec<(String, &'a mut Tensor)>, name: String, l: &'a mut Linear) {
            out.push((format!("{name}.w"), &mut l.w));
            if let Some(b) = &mut l.b {
                out.push((format!("{name}.b"), b));
            }
        }
        for (i, a) in self.attention.iter_mut().enumerate() {
            lin(&mut out, format!("attention.{i}.wq"), &mut a.wq);
            lin(&mut out, format!("attention.{i}.wk"), &mut a.wk);
            lin(&mut out, format!("attention.{i}.wv"), &mut a.wv);
            lin(&mut out, format!("attention.{i}.wo"), &mut a.wo);
        }
        for (i, b) in self.blocks.iter_mut().enumerate() {
            lin(&mut out, format!("blocks.{i}.fc1"), &mut b.fc1);
            lin(&mut out, format!("blocks.{i}.fc2"), &mut b.fc2);
            if let Some(p) = &mut b.proj {
                lin(&mut out, format!("blocks.{i}.proj"), p);
            }
        }
        for (name, h) in [
            ("opt_head", &mut self.opt_head),
            ("simp_head", &mut self.simp_head),
        ] {
            lin(&mut out, format!("{name}.fc1"), &mut h.fc1);
            lin(&mut out, format!("{name}.fc2"), &mut h.fc2);
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Input tokens of one instance.
#[derive(Clone, Debug, PartialEq)]
pub struct Tokens {
    /// `[|E|, d]`
    pub evidence: Tensor,
    /// `[2·|Q|, d]`, ascending variable, value 0 then 1.
    pub candidates: Tensor,
    /// Value-embedding row of each evidence token.
    pub evidence_rows: Vec<usize>,
    /// Value-embedding row of each candidate token.
    pub candidate_rows: Vec<usize>,
}

impl Tokens {
    pub fn num_candidates(&self) -> usize {
        self.candidate_rows.len()
    }

    /// `(variable, value)` of candidate `j`.
    pub fn candidate(&self, j: usize) -> (usize, u8) {
        let r = self.candidate_rows[j];
        (r / 2, (r % 2) as u8)
    }
}

pub fn build_tokens(net: &ScorerNetwork, evidence: &Assignment, free: &[usize]) -> Result<Tokens> {
    evidence.validate(net.num_vars)?;
    if let Some(&v) = free
        .iter()
        .find(|&&v| v >= net.num_vars || evidence.contains(v))
    {
        return Err(Error::InvalidAssignment(format!(
            "variable {v} cannot be a candidate (out of range or observed)"
        )));
    }
    let d = net.hyper.d;
    let embed = |rows: &[usize], status: usize| {
        let mut t = Tensor::zeros(&[rows.len(), d]);
        for (i, &r) in rows.iter().enumerate() {
            for ((o, a), b) in t
                .row_mut(i)
                .iter_mut()
                .zip(net.value_embeddings.row(r))
                .zip(net.status_embeddings.row(status))
            {
                *o = a + b;
            }
        }
        t
    };
    let evidence_rows: Vec<usize> = evidence.iter().map(|(v, x)| 2 * v + x as usize).collect();
    let candidate_rows: Vec<usize> = free.iter().flat_map(|&v| [2 * v, 2 * v + 1]).collect();
    Ok(Tokens {
        evidence: embed(&evidence_rows, STATUS_OBSERVED),
        candidates: embed(&candidate_rows, STATUS_UNOBSERVED),
        evidence_rows,
        candidate_rows,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Output {
    /// Optimality probabilities `ŷ`.
    pub opt: Vec<f64>,
    /// Simplification scores `s`.
    pub simp: Vec<f64>,
}

struct AttnCache {
    input: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    /// Attention weights per head, each `[n, m]`.
    probs: Vec<Tensor>,
    o: Tensor,
}

struct MlpCache {
    input: Tensor,
    pre: Tensor,
    /// Dropout scale per hidden unit (0 or `1/(1-p)`), empty when off.
    mask: Vec<f64>,
    hidden: Tensor,
}

pub struct Cache {
    attn: Vec<AttnCache>,
    blocks: Vec<MlpCache>,
    opt: MlpCache,
    simp: MlpCache,
    opt_logits: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn attention_forward(
    layer: &AttentionLayer,
    x: &Tensor,
    ev: &Tensor,
    heads: usize,
) -> (Tensor, AttnCache) {
    let (n, d) = (x.rows(), x.cols());
    let m = ev.rows();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let q = layer.wq.forward(x);
    let k = layer.wk.forward(ev);
    let v = layer.wv.forward(ev);
    let mut o = Tensor::zeros(&[n, d]);
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        let mut a = Tensor::zeros(&[n, m]);
        for i in 0..n {
            let qi = &q.row(i)[cols.clone()];
            let row = a.row_mut(i);
            for (j, s) in row.iter_mut().enumerate() {
                *s = scale
                    * qi.iter()
                        .zip(&k.row(j)[cols.clone()])
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
            }
            let top = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for s in row.iter_mut() {
                *s = (*s - top).exp();
                z += *s;
            }
            for s in row.iter_mut() {
                *s /= z;
            }
            for (j, &w) in row.iter().enumerate() {
                for (o, vv) in o.row_mut(i)[cols.clone()]
                    .iter_mut()
                    .zip(&v.row(j)[cols.clone()])
                {
                    *o += w * vv;
                }
            }
        }
        probs.push(a);
    }
    let y = if m == 0 {
        Tensor::zeros(&[n, d])
    } else {
        layer.wo.forward(&o)
    };
    (
        y,
        AttnCache {
            input: x.clone(),
            q,
            k,
            v,
            probs,
            o,
        },
    )
}

/// Returns `(d input, d evidence tokens)`.
fn attention_backward(
    layer: &AttentionLayer,
    c: &AttnCache,
    ev: &Tensor,
    dy: &Tensor,
    heads: usize,
    g: &mut AttentionLayer,
) -> (Tensor, Tensor) {
    let (n, d) = (c.input.rows(), c.input.cols());
    let m = ev.rows();
    if m == 0 {
        return (Tensor::zeros(&[n, d]), Tensor::zeros(&[0, d]));
    }
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let d_o = layer.wo.backward(&c.o, dy, &mut g.wo);
    let mut dq = Tensor::zeros(&[n, d]);
    let mut dk = Tensor::zeros(&[m, d]);
    let mut dv = Tensor::zeros(&[m, d]);
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        let a = &c.probs[h];
        for i in 0..n {
            let doi = &d_o.row(i)[cols.clone()];
            // dA_ij = dO_i · V_j, then through the row softmax.
            let da: Vec<f64> = (0..m)
                .map(|j| {
                    doi.iter()
                        .zip(&c.v.row(j)[cols.clone()])
                        .map(|(x, y)| x * y)
                        .sum()
                })
                .collect();
            let dot: f64 = (0..m).map(|j| da[j] * a.at(i, j)).sum();
            for (j, &daj) in da.iter().enumerate() {
                let aij = a.at(i, j);
                for (t, &x) in doi.iter().enumerate() {
                    dv.data[j * d + h * dh + t] += aij * x;
                }
                let ds = aij * (daj - dot) * scale;
                if ds == 0.0 {
                    continue;
                }
                for t in 0..dh {
                    let col = h * dh + t;
                    dq.data[i * d + col] += ds * c.k.data[j * d + col];
                    dk.data[j * d + col] += ds * c.q.data[i * d + col];
                }
            }
        }
    }
    let dx = layer.wq.backward(&c.input, &dq, &mut g.wq);
    let mut dev = layer.wk.backward(ev, &dk, &mut g.wk);
    dev.add_assign(&layer.wv.backward(ev, &dv, &mut g.wv));
    (dx, dev)
}

fn dropout_mask(width: usize, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Vec<f64> {
    match rng {
        Some(rng) if rate > 0.0 => {
            let keep = 1.0 / (1.0 - rate);
            (0..width)
                .map(|_| {
                    if rng.random::<f64>() < rate {
                        0.0
                    } else {
                        keep
                    }
                })
                .collect()
        }
        _ => Vec::new(),
    }
}

/// `fc2(drop(relu(fc1(x))))`
fn mlp_forward(fc1: &Linear, fc2: &Linear, x: &Tensor, mask: Vec<f64>) -> (Tensor, MlpCache) {
    let pre = fc1.forward(x);
    let mut hidden = pre.clone();
    for i in 0..hidden.rows() {
        for (j, v) in hidden.row_mut(i).iter_mut().enumerate() {
            *v = v.max(0.0) * mask.get(j).copied().unwrap_or(1.0);
        }
    }
    let y = fc2.forward(&hidden);
    (
        y,
        MlpCache {
            input: x.clone(),
            pre,
            mask,
            hidden,
        },
    )
}

fn mlp_backward(
    fc1: &Linear,
    fc2: &Linear,
    c: &MlpCache,
    dy: &Tensor,
    g1: &mut Linear,
    g2: &mut Linear,
) -> Tensor {
    let mut dh = fc2.backward(&c.hidden, dy, g2);
    for i in 0..dh.rows() {
        for (j, v) in dh.row_mut(i).iter_mut().enumerate() {
            let gate = if c.pre.at(i, j) > 0.0 { 1.0 } else { 0.0 };
            *v *= gate * c.mask.get(j).copied().unwrap_or(1.0);
        }
    }
    fc1.backward(&c.input, &dh, g1)
}

/// Forward pass. Dropout is active only when `rng` is given.
pub fn forward_with_cache(
    net: &ScorerNetwork,
    tokens: &Tokens,
    mut rng: Option<&mut ChaCha8Rng>,
) -> (Output, Cache) {
    let hp = &net.hyper;
    let mut x = tokens.candidates.clone();
    let mut attn = Vec::with_capacity(net.attention.len());
    for layer in &net.attention {
        let (y, c) = attention_forward(layer, &x, &tokens.evidence, hp.heads);
        attn.push(c);
        x = y;
    }
    let mut h = x.hcat(&tokens.candidates);
    let mut blocks = Vec::with_capacity(net.blocks.len());
    for b in &net.blocks {
        let mask = dropout_mask(hp.hidden, hp.dropout, rng.as_deref_mut());
        let (f, c) = mlp_forward(&b.fc1, &b.fc2, &h, mask);
        let mut next = match &b.proj {
            Some(p) => p.forward(&h),
            None => h.clone(),
        };
        next.add_assign(&f);
        blocks.push(c);
        h = next;
    }
    let mask = dropout_mask(hp.hidden, hp.dropout, rng.as_deref_mut());
    let (zo, opt) = mlp_forward(&net.opt_head.fc1, &net.opt_head.fc2, &h, mask);
    let mask = dropout_mask(hp.hidden, hp.dropout, rng);
    let (zs, simp) = mlp_forward(&net.simp_head.fc1, &net.simp_head.fc2, &h, mask);
    let out = Output {
        opt: zo.data.iter().map(|&z| sigmoid(z)).collect(),
        simp: zs.data.clone(),
    };
    (
        out,
        Cache {
            attn,
            blocks,
            opt,
            simp,
            opt_logits: zo.data,
        },
    )
}

pub fn forward(net: &ScorerNetwork, tokens: &Tokens) -> Output {
    forward_with_cache(net, tokens, None).0
}

/// Accumulates into `g` the gradient of a loss whose derivatives with respect
/// to the optimality logits and the simplification scores are given.
pub fn backward(
    net: &ScorerNetwork,
    tokens: &Tokens,
    cache: &Cache,
    d_opt_logits: &[f64],
    d_simp: &[f64],
    g: &mut ScorerNetwork,
) {
    let hp = &net.hyper;
    let n = tokens.num_candidates();
    let dzo = Tensor::from_vec(&[n, 1], d_opt_logits.to_vec());
    let dzs = Tensor::from_vec(&[n, 1], d_simp.to_vec());
    let (go, gs) = (&mut g.opt_head, &mut g.simp_head);
    let mut dh = mlp_backward(
        &net.opt_head.fc1,
        &net.opt_head.fc2,
        &cache.opt,
        &dzo,
        &mut go.fc1,
        &mut go.fc2,
    );
    dh.add_assign(&mlp_backward(
        &net.simp_head.fc1,
        &net.simp_head.fc2,
        &cache.simp,
        &dzs,
        &mut gs.fc1,
        &mut gs.fc2,
    ));
    for (i, b) in net.blocks.iter().enumerate().rev() {
        let c = &cache.blocks[i];
        let gb = &mut g.blocks[i];
        let mut dprev = mlp_backward(&b.fc1, &b.fc2, c, &dh, &mut gb.fc1, &mut gb.fc2);
        match (&b.proj, &mut gb.proj) {
            (Some(p), Some(gp)) => dprev.add_assign(&p.backward(&c.input, &dh, gp)),
            _ => dprev.add_assign(&dh),
        }
        dh = dprev;
    }
    let (mut dx, mut dcand) = dh.hsplit(hp.d);
    let mut dev = Tensor::zeros(&[tokens.evidence.rows(), hp.d]);
    for (i, layer) in net.attention.iter().enumerate().rev() {
        let (dxi, devi) = attention_backward(
            layer,
            &cache.attn[i],
            &tokens.evidence,
            &dx,
            hp.heads,
            &mut g.attention[i],
        );
        dev.add_assign(&devi);
        dx = dxi;
    }
    dcand.add_assign(&dx);
    for (j, &r) in tokens.candidate_rows.iter().enumerate() {
        for t in 0..hp.d {
            g.value_embeddings.data[r * hp.d + t] += dcand.at(j, t);
            g.status_embeddings.data[STATUS_UNOBSERVED * hp.d + t] += dcand.at(j, t);
        }
    }
    for (j, &r) in tokens.evidence_rows.iter().enumerate() {
        for t in 0..hp.d {
            g.value_embeddings.data[r * hp.d + t] += dev.at(j, t);
            g.status_embeddings.data[STATUS_OBSERVED * hp.d + t] += dev.at(j, t);
        }
    }
}

impl Cache {
    pub fn opt_logits(&self) -> &[f64] {
        &self.opt_logits
    }
}
