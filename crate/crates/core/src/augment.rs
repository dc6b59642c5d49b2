//! Retrieval-time logits adaptation.
//!
//! [`ft2ra_predict`] simulates fine-tuning on the retrieved neighbors: each
//! epoch it forms
//!
//! ```text
//! Δlogits = η_logits · Σ_i λ_i · (y_i − softmax(live_logits_i))
//! ```
//!
//! adds it to the query logits and to every neighbor's live logits, and
//! repeats for `E` epochs over the same neighbor set. [`knnlm_predict`] is the
//! kNN-LM interpolation baseline over the same retrieval plumbing.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datastore::Datastore;
use crate::error::{Error, Result};
use crate::knn::{Metric, NeighborSet};
use crate::prob::{self, Probs, PROB_SUM_TOL};
use crate::vocab::TokenId;

/// Temperature used for `SmaxT` when none is given.
pub const DEFAULT_TEMPERATURE: f64 = 10.0;

/// How neighbor contributions λ_i are derived from distances.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum WeightingStrategy {
    /// λ_i ∝ 1/(d_i + 1)
    Rec,
    /// λ_i = 1/k
    Uni,
    /// λ_i ∝ exp(−d_i)
    Smax,
    /// λ_i ∝ exp(−d_i / T)
    #[serde(rename = "smaxt")]
    SmaxT { temperature: f64 },
}

impl WeightingStrategy {
    pub fn smax_t(temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
        }
        Ok(WeightingStrategy::SmaxT { temperature })
    }

    /// Parses `rec`, `uni`, `smax` or `smaxt`/`smax-t`, using `temperature` for the last.
    pub fn parse_with_temperature(s: &str, temperature: f64) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rec" => Ok(Self::Rec),
            "uni" => Ok(Self::Uni),
            "smax" => Ok(Self::Smax),
            "smaxt" | "smax-t" => Self::smax_t(temperature),
            _ => Err(Error::invalid(format!("unknown weighting strategy {s:?} (expected rec, uni, smax or smaxt)"))),
        }
    }
}

impl FromStr for WeightingStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::parse_with_temperature(s, DEFAULT_TEMPERATURE)
    }
}

impl fmt::Display for WeightingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Rec => f.write_str("rec"),
            Self::Uni => f.write_str("uni"),
            Self::Smax => f.write_str("smax"),
            Self::SmaxT { temperature } => write!(f, "smaxt(T={temperature})"),
        }
    }
}

/// Normalized neighbor weights; always sums to one.
pub fn weights(distances: &[f64], strategy: WeightingStrategy) -> Result<Vec<f64>> {
    if distances.is_empty() {
        return Err(Error::invalid("cannot weight an empty neighbor set"));
    }
    if let Some(d) = distances.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
        return Err(Error::invalid(format!("distance {d} is negative or not finite")));
    }
    let raw: Vec<f64> = match strategy {
        WeightingStrategy::Rec => distances.iter().map(|d| 1.0 / (d + 1.0)).collect(),
        WeightingStrategy::Uni => vec![1.0; distances.len()],
        WeightingStrategy::Smax => neg_exp(distances, 1.0),
        WeightingStrategy::SmaxT { temperature } => {
            if !(temperature > 0.0 && temperature.is_finite()) {
                return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
            }
            neg_exp(distances, temperature)
        }
    };
    let sum: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / sum).collect())
}

/// exp(−d/T), shifted by the smallest distance so the nearest gets exp(0).
fn neg_exp(distances: &[f64], temperature: f64) -> Vec<f64> {
    let min = distances.iter().copied().fold(f64::INFINITY, f64::min);
    distances.iter().map(|d| (-(d - min) / temperature).exp()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Logits-space learning rate η_logits.
    pub eta_logits: f64,
    /// Number of retrieval epochs E.
    pub iters: usize,
    /// Number of neighbors N.
    pub neighbors: usize,
    pub strategy: WeightingStrategy,
    /// Re-base the query on the original logits every epoch instead of
    /// accumulating deltas.
    #[serde(default)]
    pub reset_query_each_epoch: bool,
    /// Write neighbor logits back to the datastore after each query.
    #[serde(default)]
    pub persist_updates: bool,
    #[serde(default)]
    pub metric: Metric,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            eta_logits: 5.0,
            iters: 7,
            neighbors: 20,
            strategy: WeightingStrategy::Rec,
            reset_query_each_epoch: false,
            persist_updates: false,
            metric: Metric::L2,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta_logits >= 0.0 && self.eta_logits.is_finite()) {
            return Err(Error::invalid(format!("eta_logits must be >= 0, got {}", self.eta_logits)));
        }
        if self.neighbors == 0 {
            return Err(Error::invalid("number of neighbors must be at least 1"));
        }
        if let WeightingStrategy::SmaxT { temperature } = self.strategy {
            WeightingStrategy::smax_t(temperature)?;
        }
        Ok(())
    }
}

/// Per-query working copies of the retrieved neighbors.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborSession {
    pub indices: Vec<usize>,
    pub targets: Vec<TokenId>,
    pub live_logits: Vec<Vec<f64>>,
    pub distances: Vec<f64>,
    pub weights: Vec<f64>,
}

impl NeighborSession {
    /// Copies the neighbors' logits out of the datastore.
    pub fn new(ds: &Datastore, neighbors: &NeighborSet, strategy: WeightingStrategy) -> Result<Self> {
        if neighbors.indices.len() != neighbors.distances.len() {
            return Err(Error::invalid("neighbor indices and distances differ in length"));
        }
        if let Some(&i) = neighbors.indices.iter().find(|&&i| i >= ds.len()) {
            return Err(Error::invalid(format!("neighbor index {i} outside datastore of {} entries", ds.len())));
        }
        let weights = if neighbors.is_empty() { Vec::new() } else { weights(&neighbors.distances, strategy)? };
        Ok(Self {
            indices: neighbors.indices.clone(),
            targets: neighbors.indices.iter().map(|&i| ds.target(i)).collect(),
            live_logits: neighbors.indices.iter().map(|&i| ds.logits(i).to_vec()).collect(),
            distances: neighbors.distances.clone(),
            weights,
        })
    }

    /// Builds a session directly from parts (weights are taken as given).
    pub fn from_parts(
        targets: Vec<TokenId>,
        live_logits: Vec<Vec<f64>>,
        distances: Vec<f64>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let k = targets.len();
        if live_logits.len() != k || distances.len() != k || weights.len() != k {
            return Err(Error::invalid("session fields must have equal lengths"));
        }
        if k > 0 {
            let v = live_logits[0].len();
            if live_logits.iter().any(|l| l.len() != v) || targets.iter().any(|t| t.index() >= v) {
                return Err(Error::invalid("inconsistent neighbor logits width or target"));
            }
            let sum: f64 = weights.iter().sum();
            if (sum - 1.0).abs() > PROB_SUM_TOL {
                return Err(Error::invalid(format!("weights sum to {sum}")));
            }
        }
        Ok(Self { indices: (0..k).collect(), targets, live_logits, distances, weights })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    fn apply(&mut self, delta: &[f64]) {
        for live in &mut self.live_logits {
            for (l, d) in live.iter_mut().zip(delta) {
                *l += d;
            }
        }
    }
}

/// η_logits · Σ_i λ_i (y_i − softmax(live_logits_i)), a vector of length `v`.
pub fn delta_logits(session: &NeighborSession, eta_logits: f64, v: usize) -> Vec<f64> {
    let mut delta = vec![0.0; v];
    for ((live, &target), &lambda) in session.live_logits.iter().zip(&session.targets).zip(&session.weights) {
        let probs = prob::softmax_finite(live);
        let scale = lambda * eta_logits;
        for (d, p) in delta.iter_mut().zip(&probs) {
            *d -= scale * p;
        }
        delta[target.index()] += scale;
    }
    delta
}

/// One epoch of the iterative update.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    pub delta: Vec<f64>,
    /// Query logits after applying this epoch's delta.
    pub query_logits: Vec<f64>,
}

impl EpochRecord {
    pub fn delta_norm(&self) -> f64 {
        self.delta.iter().map(|d| d * d).sum::<f64>().sqrt()
    }

    /// The `k` highest query logits, highest first (ties by lower id).
    pub fn top(&self, k: usize) -> Vec<(TokenId, f64)> {
        let mut idx: Vec<usize> = (0..self.query_logits.len()).collect();
        idx.sort_by(|&a, &b| self.query_logits[b].total_cmp(&self.query_logits[a]).then(a.cmp(&b)));
        idx.into_iter().take(k).map(|i| (TokenId::from(i), self.query_logits[i])).collect()
    }

    /// `epoch`, five token ids, their logits, then ‖Δlogits‖₂; tab-separated.
    pub fn to_tsv_line(&self) -> String {
        let top = self.top(5);
        let mut cols = vec![self.epoch.to_string()];
        cols.extend(top.iter().map(|(id, _)| id.to_string()));
        cols.extend(top.iter().map(|(_, l)| format!("{l:.6}")));
        cols.push(format!("{:.6}", self.delta_norm()));
        cols.join("\t")
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub records: Vec<EpochRecord>,
}

impl Trace {
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.to_tsv_line());
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ft2RaOutput {
    pub probs: Probs,
    pub logits: Vec<f64>,
    pub trace: Trace,
}

/// Iterative neighbor-driven logits update for one query. The datastore is
/// only read; neighbor updates live in a per-query session.
pub fn ft2ra_predict(
    base_logits: &[f64],
    neighbors: &NeighborSet,
    ds: &Datastore,
    cfg: &AugmentConfig,
) -> Result<Ft2RaOutput> {
    if cfg.persist_updates {
        return Err(Error::invalid("persistent updates need exclusive datastore access; use ft2ra_predict_persist"));
    }
    let (out, _) = run(base_logits, neighbors, ds, cfg)?;
    Ok(out)
}

/// Like [`ft2ra_predict`], then writes the neighbors' updated logits back
/// into the datastore. Requires exclusive access, so queries in this mode
/// are necessarily sequential.
pub fn ft2ra_predict_persist(
    base_logits: &[f64],
    neighbors: &NeighborSet,
    ds: &mut Datastore,
    cfg: &AugmentConfig,
) -> Result<Ft2RaOutput> {
    let (out, session) = run(base_logits, neighbors, ds, cfg)?;
    for (&i, live) in session.indices.iter().zip(&session.live_logits) {
        ds.logits_mut(i).copy_from_slice(live);
    }
    Ok(out)
}

fn run(
    base_logits: &[f64],
    neighbors: &NeighborSet,
    ds: &Datastore,
    cfg: &AugmentConfig,
) -> Result<(Ft2RaOutput, NeighborSession)> {
    cfg.validate()?;
    let v = ds.vocab_size();
    if base_logits.len() != v {
        return Err(Error::invalid(format!(
            "base logits have {} entries, datastore vocabulary is {v}",
            base_logits.len()
        )));
    }
    if base_logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("base logits are not finite"));
    }
    let mut session = NeighborSession::new(ds, neighbors, cfg.strategy)?;
    let mut query = base_logits.to_vec();
    let mut trace = Trace::default();
    for epoch in 1..=cfg.iters {
        let delta = delta_logits(&session, cfg.eta_logits, v);
        if cfg.reset_query_each_epoch {
            query.copy_from_slice(base_logits);
        }
        for (q, d) in query.iter_mut().zip(&delta) {
            *q += d;
        }
        session.apply(&delta);
        trace.records.push(EpochRecord { epoch, delta, query_logits: query.clone() });
    }
    let probs = Probs::from_vec_unchecked(prob::softmax_finite(&query));
    Ok((Ft2RaOutput { probs, logits: query, trace }, session))
}

/// p_kNN(y) ∝ Σ_{i: target_i = y} exp(−d_i), zero for targets not retrieved.
pub fn knn_distribution(neighbors: &NeighborSet, ds: &Datastore) -> Result<Vec<f64>> {
    let mut p = vec![0.0; ds.vocab_size()];
    if neighbors.is_empty() {
        return Ok(p);
    }
    let w = weights(&neighbors.distances, WeightingStrategy::Smax)?;
    for (&i, wi) in neighbors.indices.iter().zip(w) {
        if i >= ds.len() {
            return Err(Error::invalid(format!("neighbor index {i} outside datastore")));
        }
        p[ds.target(i).index()] += wi;
    }
    Ok(p)
}

/// kNN-LM: `(1 − λ)·base + λ·p_kNN`. An empty neighbor set returns `base`.
pub fn knnlm_predict(base: &Probs, neighbors: &NeighborSet, ds: &Datastore, lambda: f64) -> Result<Probs> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    if base.len() != ds.vocab_size() {
        return Err(Error::invalid(format!(
            "base distribution has {} entries, datastore vocabulary is {}",
            base.len(),
            ds.vocab_size()
        )));
    }
    if neighbors.is_empty() || lambda == 0.0 {
        return Ok(base.clone());
    }
    let knn = knn_distribution(neighbors, ds)?;
    let mixed = base.iter().zip(&knn).map(|(b, k)| (1.0 - lambda) * b + lambda * k).collect();
    Ok(Probs::from_vec_unchecked(mixed))
}
