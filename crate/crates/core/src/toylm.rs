//! A small next-token model: embedding lookup, one tanh hidden layer (the
//! "seqout" representation) and a strictly linear lm-head, so that
//! `logits == W·seqout + b` holds exactly.
//!
//! Because the head is literally linear, one SGD step on `W` alone moves the
//! logits of the same context by exactly `-η_θ·‖seqout‖²·(y′ − y)`; see
//! [`sgd_step_lm_head`].

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::binio::{self, ByteReader};
use crate::context::ContextWindow;
use crate::error::{Error, Result};
use crate::prob::{self, Logits, Probs};
use crate::vocab::{TokenId, Vocab};

pub const MODEL_MAGIC: &[u8; 8] = b"FT2RALM1";

const INIT_SCALE: f64 = 0.1;

/// Parameter groups, in file order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamGroup {
    #[serde(rename = "embed")]
    Embed,
    #[serde(rename = "hidden")]
    Hidden,
    #[serde(rename = "lm_head_W")]
    LmHeadW,
    #[serde(rename = "lm_head_b")]
    LmHeadB,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 4] = [ParamGroup::Embed, ParamGroup::Hidden, ParamGroup::LmHeadW, ParamGroup::LmHeadB];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Embed => "embed",
            ParamGroup::Hidden => "hidden",
            ParamGroup::LmHeadW => "lm_head_W",
            ParamGroup::LmHeadB => "lm_head_b",
        }
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ParamGroup {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ParamGroup::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown parameter group {s:?}")))
    }
}

/// Model shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyLmDims {
    /// Vocabulary size.
    pub v: usize,
    /// Context length in tokens.
    pub n: usize,
    pub d_emb: usize,
    /// Width of the seqout layer.
    pub dmodel: usize,
}

impl ToyLmDims {
    fn validate(&self) -> Result<()> {
        if self.v < 2 || self.n == 0 || self.d_emb == 0 || self.dmodel == 0 {
            return Err(Error::invalid(format!("bad model dimensions {self:?}")));
        }
        Ok(())
    }

    fn input_width(&self) -> usize {
        self.n * self.d_emb
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyLm {
    dims: ToyLmDims,
    /// v × d_emb
    embed: Vec<f64>,
    /// dmodel × (n·d_emb)
    w1: Vec<f64>,
    b1: Vec<f64>,
    /// v × dmodel
    w: Vec<f64>,
    b: Vec<f64>,
}

/// Output of a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Forward {
    pub seqout: Vec<f64>,
    pub logits: Logits,
}

impl ToyLm {
    /// Deterministic init: weights uniform in [-0.1, 0.1], biases zero.
    pub fn new(dims: ToyLmDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.gen_range(-INIT_SCALE..=INIT_SCALE)).collect() };
        let embed = draw(dims.v * dims.d_emb);
        let w1 = draw(dims.dmodel * dims.input_width());
        let w = draw(dims.v * dims.dmodel);
        Ok(Self { dims, embed, w1, b1: vec![0.0; dims.dmodel], w, b: vec![0.0; dims.v] })
    }

    pub fn for_vocab(vocab: &Vocab, n: usize, d_emb: usize, dmodel: usize, seed: u64) -> Result<Self> {
        Self::new(ToyLmDims { v: vocab.len(), n, d_emb, dmodel }, seed)
    }

    /// Assembles a model from explicit parameters (row-major).
    pub fn from_parts(
        dims: ToyLmDims,
        embed: Vec<f64>,
        w1: Vec<f64>,
        b1: Vec<f64>,
        w: Vec<f64>,
        b: Vec<f64>,
    ) -> Result<Self> {
        dims.validate()?;
        let expect = [
            ("embed", embed.len(), dims.v * dims.d_emb),
            ("hidden weights", w1.len(), dims.dmodel * dims.input_width()),
            ("hidden bias", b1.len(), dims.dmodel),
            ("lm-head weights", w.len(), dims.v * dims.dmodel),
            ("lm-head bias", b.len(), dims.v),
        ];
        for (what, got, want) in expect {
            if got != want {
                return Err(Error::invalid(format!("{what}: {got} values, expected {want}")));
            }
        }
        let model = Self { dims, embed, w1, b1, w, b };
        if model.groups().iter().flat_map(|g| g.iter()).any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite parameter"));
        }
        Ok(model)
    }

    pub fn dims(&self) -> ToyLmDims {
        self.dims
    }

    pub fn vocab_size(&self) -> usize {
        self.dims.v
    }

    pub fn context_len(&self) -> usize {
        self.dims.n
    }

    pub fn dmodel(&self) -> usize {
        self.dims.dmodel
    }

    pub fn lm_head_weights(&self) -> &[f64] {
        &self.w
    }

    pub fn lm_head_bias(&self) -> &[f64] {
        &self.b
    }

    fn groups(&self) -> [&[f64]; 5] {
        [&self.embed, &self.w1, &self.b1, &self.w, &self.b]
    }

    pub fn forward(&self, ctx: &ContextWindow) -> Result<Forward> {
        ctx.validate(self.dims.n, self.dims.v)?;
        let mut x = vec![0.0; self.dims.input_width()];
        let mut seqout = vec![0.0; self.dims.dmodel];
        self.gather(ctx.tokens(), &mut x);
        self.hidden(&x, &mut seqout);
        let mut logits = vec![0.0; self.dims.v];
        self.head(&seqout, &mut logits);
        Ok(Forward { seqout, logits: Logits::from_vec_unchecked(logits) })
    }

    pub fn predict(&self, ctx: &ContextWindow) -> Result<Probs> {
        let f = self.forward(ctx)?;
        Ok(Probs::from_vec_unchecked(prob::softmax_finite(&f.logits)))
    }

    fn gather(&self, ctx: &[TokenId], x: &mut [f64]) {
        let d = self.dims.d_emb;
        for (j, tok) in ctx.iter().enumerate() {
            let row = tok.index() * d;
            x[j * d..(j + 1) * d].copy_from_slice(&self.embed[row..row + d]);
        }
    }

    fn hidden(&self, x: &[f64], seqout: &mut [f64]) {
        let width = x.len();
        for (i, s) in seqout.iter_mut().enumerate() {
            let row = &self.w1[i * width..(i + 1) * width];
            *s = (dot(row, x) + self.b1[i]).tanh();
        }
    }

    /// logits = W·seqout + b
    fn head(&self, seqout: &[f64], logits: &mut [f64]) {
        let d = self.dims.dmodel;
        for (k, l) in logits.iter_mut().enumerate() {
            *l = dot(&self.w[k * d..(k + 1) * d], seqout) + self.b[k];
        }
    }

    /// Hex prefix of a SHA-256 over the serialized model.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Serializes in the FT2RALM1 layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n_params: usize = self.groups().iter().map(|g| g.len()).sum();
        let mut out = Vec::with_capacity(24 + 8 * n_params);
        out.extend_from_slice(MODEL_MAGIC);
        for x in [self.dims.v, self.dims.n, self.dims.d_emb, self.dims.dmodel] {
            binio::put_u32(&mut out, x as u32);
        }
        for g in self.groups() {
            for &x in g {
                binio::put_f64(&mut out, x);
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(buf);
        let magic = r.take(8, "magic")?;
        if magic != MODEL_MAGIC {
            return Err(Error::format(0, "bad magic, expected FT2RALM1"));
        }
        let mut hdr = [0usize; 4];
        for (slot, what) in hdr.iter_mut().zip(["v", "n", "d_emb", "dmodel"]) {
            *slot = r.u32(what)? as usize;
        }
        let dims = ToyLmDims { v: hdr[0], n: hdr[1], d_emb: hdr[2], dmodel: hdr[3] };
        dims.validate().map_err(|e| Error::format(8, e.to_string()))?;
        let lens = [dims.v * dims.d_emb, dims.dmodel * dims.input_width(), dims.dmodel, dims.v * dims.dmodel, dims.v];
        let total: usize = lens.iter().sum();
        if r.remaining() != total * 8 {
            return Err(Error::format(
                r.offset() + r.remaining().min(total * 8) as u64,
                format!("parameter payload is {} bytes, header implies {}", r.remaining(), total * 8),
            ));
        }
        let mut groups = Vec::with_capacity(5);
        let names = ["embed", "hidden weights", "hidden bias", "lm_head_W", "lm_head_b"];
        for (len, name) in lens.iter().zip(names) {
            let mut g = Vec::with_capacity(*len);
            for _ in 0..*len {
                let at = r.offset();
                let x = r.f64(name)?;
                if !x.is_finite() {
                    return Err(Error::format(at, "non-finite parameter"));
                }
                g.push(x);
            }
            groups.push(g);
        }
        r.finish()?;
        let mut it = groups.into_iter();
        let mut next = || it.next().expect("five groups");
        Ok(Self { dims, embed: next(), w1: next(), b1: next(), w: next(), b: next() })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// ∂CE/∂logits = y′ − y.
pub fn grad_logits(probs: &[f64], target: TokenId) -> Vec<f64> {
    let mut g = probs.to_vec();
    g[target.index()] -= 1.0;
    g
}

/// Which lm-head parameters a single step updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadUpdate {
    WeightsOnly,
    WeightsAndBias,
}

/// Measured vs. closed-form logits change from one lm-head SGD step.
#[derive(Clone, Debug, PartialEq)]
pub struct LmHeadStep {
    /// logits_after − logits_before on the same context.
    pub measured: Vec<f64>,
    /// −η_θ·‖seqout‖²·(y′ − y)
    pub predicted: Vec<f64>,
    pub seqout_norm_sq: f64,
}

impl LmHeadStep {
    /// ‖measured − predicted‖₂ / ‖predicted‖₂ (0 when both vanish).
    pub fn relative_error(&self) -> f64 {
        let diff: f64 = self.measured.iter().zip(&self.predicted).map(|(m, p)| (m - p) * (m - p)).sum::<f64>().sqrt();
        let norm: f64 = self.predicted.iter().map(|p| p * p).sum::<f64>().sqrt();
        if norm == 0.0 {
            diff
        } else {
            diff / norm
        }
    }
}

/// Applies one SGD step to the lm-head of a clone of `model` (everything
/// upstream of seqout frozen) and reports how the logits on `ctx` moved.
pub fn sgd_step_lm_head(
    model: &ToyLm,
    ctx: &ContextWindow,
    target: TokenId,
    eta_theta: f64,
    update: HeadUpdate,
) -> Result<LmHeadStep> {
    if target.index() >= model.dims.v {
        return Err(Error::invalid(format!("target {target} out of range")));
    }
    let before = model.forward(ctx)?;
    let probs = prob::softmax_finite(&before.logits);
    let g = grad_logits(&probs, target);
    let s = &before.seqout;
    let d = model.dims.dmodel;

    let mut stepped = model.clone();
    for (k, gk) in g.iter().enumerate() {
        for (wkj, sj) in stepped.w[k * d..(k + 1) * d].iter_mut().zip(s) {
            *wkj -= eta_theta * gk * sj;
        }
        if update == HeadUpdate::WeightsAndBias {
            stepped.b[k] -= eta_theta * gk;
        }
    }
    let after = stepped.forward(ctx)?;

    let seqout_norm_sq = dot(s, s);
    let measured = after.logits.iter().zip(before.logits.iter()).map(|(a, b)| a - b).collect();
    let predicted = g.iter().map(|gk| -eta_theta * seqout_norm_sq * gk).collect();
    Ok(LmHeadStep { measured, predicted, seqout_norm_sq })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Parameter-space learning rate.
    pub eta_theta: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    #[serde(default)]
    pub freeze: BTreeSet<ParamGroup>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { eta_theta: 0.1, epochs: 1, batch: 16, seed: 0, freeze: BTreeSet::new() }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.eta_theta > 0.0 && self.eta_theta.is_finite()) {
            return Err(Error::invalid("eta_theta must be positive"));
        }
        if self.batch == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        Ok(())
    }

    fn trains(&self, g: ParamGroup) -> bool {
        !self.freeze.contains(&g)
    }
}

/// Trains with plain mini-batch SGD on next-token cross-entropy.
pub fn train(model: &ToyLm, corpus: &[TokenId], cfg: &TrainConfig) -> Result<ToyLm> {
    check_corpus(model, corpus)?;
    cfg.validate()?;
    let mut out = model.clone();
    for epoch in 0..cfg.epochs {
        train_epoch(&mut out, corpus, cfg, epoch as u64)?;
    }
    Ok(out)
}

/// Continues training an already trained model; identical to [`train`].
pub fn finetune(model: &ToyLm, corpus: &[TokenId], cfg: &TrainConfig) -> Result<ToyLm> {
    train(model, corpus, cfg)
}

/// Like [`train`], also returning the corpus mean loss before training and
/// after every epoch.
pub fn train_with_history(model: &ToyLm, corpus: &[TokenId], cfg: &TrainConfig) -> Result<(ToyLm, Vec<f64>)> {
    check_corpus(model, corpus)?;
    cfg.validate()?;
    let mut out = model.clone();
    let mut losses = vec![mean_loss(&out, corpus)?];
    for epoch in 0..cfg.epochs {
        train_epoch(&mut out, corpus, cfg, epoch as u64)?;
        losses.push(mean_loss(&out, corpus)?);
    }
    Ok((out, losses))
}

fn check_corpus(model: &ToyLm, corpus: &[TokenId]) -> Result<()> {
    if corpus.len() <= model.dims.n {
        return Err(Error::invalid(format!(
            "corpus has {} tokens; need more than the context length {}",
            corpus.len(),
            model.dims.n
        )));
    }
    if let Some(bad) = corpus.iter().find(|t| t.index() >= model.dims.v) {
        return Err(Error::invalid(format!("corpus token {bad} outside model vocabulary")));
    }
    Ok(())
}

/// One pass over all (context, next token) pairs in a seeded shuffled order.
/// Epoch `e` always uses the same order for a given seed, so training `k`
/// epochs equals `k` successive calls with epochs `0..k`.
pub fn train_epoch(model: &mut ToyLm, corpus: &[TokenId], cfg: &TrainConfig, epoch: u64) -> Result<()> {
    check_corpus(model, corpus)?;
    cfg.validate()?;
    let n = model.dims.n;
    let mut order: Vec<usize> = (n..corpus.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(epoch);
    order.shuffle(&mut rng);

    let mut ws = Workspace::new(model.dims);
    let mut grads = Grads::zeros(model.dims);
    for batch in order.chunks(cfg.batch) {
        grads.clear();
        for &t in batch {
            let ctx = &corpus[t - n..t];
            model.accumulate(ctx, corpus[t], cfg, &mut ws, &mut grads);
        }
        model.apply(&grads, cfg, cfg.eta_theta / batch.len() as f64);
    }
    Ok(())
}

/// Mean next-token cross-entropy over the corpus' full-context positions.
pub fn mean_loss(model: &ToyLm, corpus: &[TokenId]) -> Result<f64> {
    check_corpus(model, corpus)?;
    let n = model.dims.n;
    let losses: Vec<f64> = (n..corpus.len())
        .into_par_iter()
        .map(|t| {
            let ctx = ContextWindow::new(corpus[t - n..t].to_vec());
            let f = model.forward(&ctx).expect("validated corpus");
            prob::cross_entropy_logits(&f.logits, corpus[t])
        })
        .collect();
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

struct Workspace {
    x: Vec<f64>,
    s: Vec<f64>,
    logits: Vec<f64>,
    ds: Vec<f64>,
    dx: Vec<f64>,
}

impl Workspace {
    fn new(dims: ToyLmDims) -> Self {
        Self {
            x: vec![0.0; dims.input_width()],
            s: vec![0.0; dims.dmodel],
            logits: vec![0.0; dims.v],
            ds: vec![0.0; dims.dmodel],
            dx: vec![0.0; dims.input_width()],
        }
    }
}

struct Grads {
    embed: Vec<f64>,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w: Vec<f64>,
    b: Vec<f64>,
}

impl Grads {
    fn zeros(dims: ToyLmDims) -> Self {
        Self {
            embed: vec![0.0; dims.v * dims.d_emb],
            w1: vec![0.0; dims.dmodel * dims.input_width()],
            b1: vec![0.0; dims.dmodel],
            w: vec![0.0; dims.v * dims.dmodel],
            b: vec![0.0; dims.v],
        }
    }

    fn clear(&mut self) {
        for g in [&mut self.embed, &mut self.w1, &mut self.b1, &mut self.w, &mut self.b] {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }
}

impl ToyLm {
    /// Adds the cross-entropy gradient for one example into `g`.
    fn accumulate(&self, ctx: &[TokenId], target: TokenId, cfg: &TrainConfig, ws: &mut Workspace, g: &mut Grads) {
        let ToyLmDims { d_emb, dmodel, .. } = self.dims;
        let width = self.dims.input_width();
        self.gather(ctx, &mut ws.x);
        self.hidden(&ws.x, &mut ws.s);
        self.head(&ws.s, &mut ws.logits);

        // logits → y′ − y in place
        let max = ws.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for l in ws.logits.iter_mut() {
            *l = (*l - max).exp();
            sum += *l;
        }
        for l in ws.logits.iter_mut() {
            *l /= sum;
        }
        ws.logits[target.index()] -= 1.0;
        let gl = &ws.logits;

        if cfg.trains(ParamGroup::LmHeadW) {
            for (k, &gk) in gl.iter().enumerate() {
                for (acc, &sj) in g.w[k * dmodel..(k + 1) * dmodel].iter_mut().zip(&ws.s) {
                    *acc += gk * sj;
                }
            }
        }
        if cfg.trains(ParamGroup::LmHeadB) {
            for (acc, &gk) in g.b.iter_mut().zip(gl) {
                *acc += gk;
            }
        }
        let upstream = cfg.trains(ParamGroup::Hidden) || cfg.trains(ParamGroup::Embed);
        if !upstream {
            return;
        }
        // ds = Wᵀ·gl, then through tanh
        ws.ds.iter_mut().for_each(|x| *x = 0.0);
        for (k, &gk) in gl.iter().enumerate() {
            for (acc, &wkj) in ws.ds.iter_mut().zip(&self.w[k * dmodel..(k + 1) * dmodel]) {
                *acc += gk * wkj;
            }
        }
        for (dh, &s) in ws.ds.iter_mut().zip(&ws.s) {
            *dh *= 1.0 - s * s;
        }
        if cfg.trains(ParamGroup::Hidden) {
            for (i, &dh) in ws.ds.iter().enumerate() {
                for (acc, &xj) in g.w1[i * width..(i + 1) * width].iter_mut().zip(&ws.x) {
                    *acc += dh * xj;
                }
                g.b1[i] += dh;
            }
        }
        if cfg.trains(ParamGroup::Embed) {
            ws.dx.iter_mut().for_each(|x| *x = 0.0);
            for (i, &dh) in ws.ds.iter().enumerate() {
                for (acc, &wij) in ws.dx.iter_mut().zip(&self.w1[i * width..(i + 1) * width]) {
                    *acc += dh * wij;
                }
            }
            for (j, tok) in ctx.iter().enumerate() {
                let row = tok.index() * d_emb;
                for (acc, &d) in g.embed[row..row + d_emb].iter_mut().zip(&ws.dx[j * d_emb..(j + 1) * d_emb]) {
                    *acc += d;
                }
            }
        }
    }

    fn apply(&mut self, g: &Grads, cfg: &TrainConfig, rate: f64) {
        let pairs: [(ParamGroup, &mut Vec<f64>, &Vec<f64>); 5] = [
            (ParamGroup::Embed, &mut self.embed, &g.embed),
            (ParamGroup::Hidden, &mut self.w1, &g.w1),
            (ParamGroup::Hidden, &mut self.b1, &g.b1),
            (ParamGroup::LmHeadW, &mut self.w, &g.w),
            (ParamGroup::LmHeadB, &mut self.b, &g.b),
        ];
        for (group, params, grad) in pairs {
            if cfg.trains(group) {
                for (p, d) in params.iter_mut().zip(grad) {
                    *p -= rate * d;
                }
            }
        }
    }
}

#[cfg(test)]
#[allow(clippy::excessive_precision, clippy::needless_range_loop)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn dims() -> ToyLmDims {
        ToyLmDims { v: 12, n: 3, d_emb: 4, dmodel: 6 }
    }

    fn ctx(ids: &[u32]) -> ContextWindow {
        ContextWindow::new(ids.iter().map(|&i| TokenId(i)).collect())
    }

    #[test]
    fn init_is_deterministic() {
        let a = ToyLm::new(dims(), 7).unwrap();
        let b = ToyLm::new(dims(), 7).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let c = ToyLm::new(dims(), 8).unwrap();
        assert_ne!(a.w, c.w);
        assert!(a.embed.iter().chain(&a.w1).chain(&a.w).all(|x| x.abs() <= 0.1));
        assert!(a.b.iter().chain(&a.b1).all(|&x| x == 0.0));
    }

    #[test]
    fn fresh_model_gives_finite_logits() {
        let m = ToyLm::new(dims(), 1).unwrap();
        for a in 0..12 {
            let f = m.forward(&ctx(&[a, (a + 5) % 12, 11])).unwrap();
            assert!(f.logits.iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn zero_model_is_uniform() {
        let d = dims();
        let m = ToyLm::from_parts(
            d,
            vec![0.0; d.v * d.d_emb],
            vec![0.0; d.dmodel * d.n * d.d_emb],
            vec![0.0; d.dmodel],
            vec![0.0; d.v * d.dmodel],
            vec![0.0; d.v],
        )
        .unwrap();
        let f = m.forward(&ctx(&[1, 2, 3])).unwrap();
        assert!(f.logits.iter().all(|&x| x == 0.0));
        let p = m.predict(&ctx(&[1, 2, 3])).unwrap();
        assert!(p.iter().all(|&x| x == 1.0 / 12.0));
    }

    #[test]
    fn logits_are_exactly_linear_in_seqout() {
        for seed in 0..20 {
            let m = ToyLm::new(dims(), seed).unwrap();
            let f = m.forward(&ctx(&[seed as u32 % 12, 3, 4])).unwrap();
            for k in 0..m.dims.v {
                let manual: f64 =
                    (0..m.dims.dmodel).map(|j| m.w[k * m.dims.dmodel + j] * f.seqout[j]).sum::<f64>() + m.b[k];
                assert_eq!(f.logits[k], manual);
            }
        }
    }

    #[test]
    fn hand_sized_forward() {
        let d = ToyLmDims { v: 2, n: 1, d_emb: 2, dmodel: 2 };
        let m = ToyLm::from_parts(
            d,
            vec![0.5, -1.0, 2.0, 0.25],
            vec![1.0, 2.0, -1.0, 0.5],
            vec![0.1, -0.2],
            vec![1.0, -1.0, 0.5, 2.0],
            vec![0.3, -0.3],
        )
        .unwrap();
        let f = m.forward(&ctx(&[1])).unwrap();
        // tanh(2.6), tanh(-2.075) and W·s + b evaluated to 30 digits
        assert_relative_eq!(f.seqout[0], 0.989_027_402_201_099_189_340_962_436_758, max_relative = 1e-14);
        assert_relative_eq!(f.seqout[1], -0.968_960_486_843_182_214_500_628_862_080, max_relative = 1e-14);
        assert_relative_eq!(f.logits[0], 2.257_987_889_044_281_403_841_591_298_838, max_relative = 1e-14);
        assert_relative_eq!(f.logits[1], -1.743_407_272_585_814_834_330_776_505_781, max_relative = 1e-14);
    }

    #[test]
    fn forward_rejects_bad_context() {
        let m = ToyLm::new(dims(), 1).unwrap();
        assert!(m.forward(&ctx(&[1, 2])).is_err());
        assert!(m.forward(&ctx(&[1, 2, 12])).is_err());
    }

    #[test]
    fn grad_logits_basic() {
        let g = grad_logits(&[0.25; 4], TokenId(2));
        assert_eq!(g, vec![0.25, 0.25, -0.75, 0.25]);
        let g = grad_logits(&[0.0, 1.0, 0.0], TokenId(1));
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_rate_step_is_zero() {
        let m = ToyLm::new(dims(), 3).unwrap();
        let step = sgd_step_lm_head(&m, &ctx(&[1, 2, 3]), TokenId(4), 0.0, HeadUpdate::WeightsOnly).unwrap();
        assert!(step.measured.iter().all(|&x| x == 0.0));
        assert!(step.predicted.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn bias_adds_plain_gradient_term() {
        let m = ToyLm::new(dims(), 5).unwrap();
        let c = ctx(&[0, 7, 9]);
        let eta = 0.3;
        let w_only = sgd_step_lm_head(&m, &c, TokenId(2), eta, HeadUpdate::WeightsOnly).unwrap();
        let both = sgd_step_lm_head(&m, &c, TokenId(2), eta, HeadUpdate::WeightsAndBias).unwrap();
        let probs = m.predict(&c).unwrap();
        let g = grad_logits(&probs, TokenId(2));
        for k in 0..m.dims.v {
            let extra = both.measured[k] - w_only.measured[k];
            assert!((extra - (-eta * g[k])).abs() < 1e-13, "{k}: {extra}");
        }
    }

    #[test]
    fn epochs_zero_is_identity() {
        let m = ToyLm::new(dims(), 2).unwrap();
        let corpus: Vec<TokenId> = (0..40).map(|i| TokenId(i % 12)).collect();
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        assert_eq!(train(&m, &corpus, &cfg).unwrap().to_bytes(), m.to_bytes());
    }

    #[test]
    fn train_rejects_short_corpus() {
        let m = ToyLm::new(dims(), 2).unwrap();
        let cfg = TrainConfig::default();
        assert!(train(&m, &[], &cfg).is_err());
        assert!(train(&m, &[TokenId(1); 3], &cfg).is_err());
    }

    #[test]
    fn frozen_groups_do_not_move() {
        let m = ToyLm::new(dims(), 2).unwrap();
        let corpus: Vec<TokenId> = (0..60).map(|i| TokenId((i * 7) % 12)).collect();
        let cfg = TrainConfig {
            epochs: 2,
            freeze: [ParamGroup::Embed, ParamGroup::LmHeadB].into_iter().collect(),
            ..TrainConfig::default()
        };
        let t = train(&m, &corpus, &cfg).unwrap();
        assert_eq!(t.embed, m.embed);
        assert_eq!(t.b, m.b);
        assert_ne!(t.w, m.w);
        assert_ne!(t.w1, m.w1);
    }

    #[test]
    fn epochwise_training_matches_full_run() {
        let m = ToyLm::new(dims(), 4).unwrap();
        let corpus: Vec<TokenId> = (0..80).map(|i| TokenId((i * 5 + i / 3) % 12)).collect();
        let cfg = TrainConfig { epochs: 3, seed: 99, ..TrainConfig::default() };
        let full = train(&m, &corpus, &cfg).unwrap();
        let mut step = m.clone();
        for e in 0..3 {
            train_epoch(&mut step, &corpus, &cfg, e).unwrap();
        }
        assert_eq!(full.to_bytes(), step.to_bytes());
    }

    #[test]
    fn param_group_names_round_trip() {
        for g in ParamGroup::ALL {
            assert_eq!(g.name().parse::<ParamGroup>().unwrap(), g);
        }
        assert!("bias".parse::<ParamGroup>().is_err());
    }

    #[test]
    fn model_bytes_round_trip() {
        let m = ToyLm::new(dims(), 11).unwrap();
        let bytes = m.to_bytes();
        assert_eq!(&bytes[..8], MODEL_MAGIC);
        let back = ToyLm::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn model_bytes_reject_corruption() {
        let m = ToyLm::new(dims(), 11).unwrap();
        let bytes = m.to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(ToyLm::from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
        let truncated = &bytes[..bytes.len() - 5];
        match ToyLm::from_bytes(truncated) {
            Err(Error::Format { offset, .. }) => assert!(offset >= 24),
            other => panic!("expected format error, got {other:?}"),
        }
        assert!(ToyLm::from_bytes(&bytes[..10]).is_err());
        let mut nan = bytes.clone();
        nan[24..32].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(ToyLm::from_bytes(&nan), Err(Error::Format { offset: 24, .. })));
    }
}
