//! Next-token predictors: the bare model and the two retrieval-augmented
//! methods sharing the same retrieval plumbing.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::augment::{self, AugmentConfig, Ft2RaOutput};
use crate::context::ContextWindow;
use crate::datastore::Datastore;
use crate::error::{Error, Result};
use crate::knn::{self, Metric};
use crate::prob::Probs;
use crate::toylm::ToyLm;

/// A next-token distribution given a fixed-length context. Implementations
/// are read-only and may be shared across threads.
pub trait Predictor: Sync {
    fn context_len(&self) -> usize;
    fn predict(&self, ctx: &ContextWindow) -> Result<Probs>;
}

/// A predictor that may mutate state between queries.
pub trait PredictorMut {
    fn context_len(&self) -> usize;
    fn predict_mut(&mut self, ctx: &ContextWindow) -> Result<Probs>;
}

impl<P: Predictor + ?Sized> PredictorMut for &P {
    fn context_len(&self) -> usize {
        (**self).context_len()
    }

    fn predict_mut(&mut self, ctx: &ContextWindow) -> Result<Probs> {
        (**self).predict(ctx)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Original,
    Ft2ra,
    Knnlm,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Original => "original",
            Method::Ft2ra => "ft2ra",
            Method::Knnlm => "knnlm",
        })
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "original" => Ok(Method::Original),
            "ft2ra" => Ok(Method::Ft2ra),
            "knnlm" | "knn-lm" => Ok(Method::Knnlm),
            _ => Err(Error::invalid(format!("unknown method {s:?} (expected original, ft2ra or knnlm)"))),
        }
    }
}

/// The language model alone.
pub struct OriginalLm<'a> {
    pub model: &'a ToyLm,
}

impl Predictor for OriginalLm<'_> {
    fn context_len(&self) -> usize {
        self.model.context_len()
    }

    fn predict(&self, ctx: &ContextWindow) -> Result<Probs> {
        self.model.predict(ctx)
    }
}

fn check_pair(model: &ToyLm, ds: &Datastore) -> Result<()> {
    ds.check_compatible(model.vocab_size(), model.dmodel())
}

/// Model plus iterative neighbor-driven logits update (ephemeral mode).
pub struct Ft2RaLm<'a> {
    model: &'a ToyLm,
    ds: &'a Datastore,
    cfg: AugmentConfig,
}

impl<'a> Ft2RaLm<'a> {
    pub fn new(model: &'a ToyLm, ds: &'a Datastore, cfg: AugmentConfig) -> Result<Self> {
        check_pair(model, ds)?;
        cfg.validate()?;
        if cfg.persist_updates {
            return Err(Error::invalid("use PersistentFt2RaLm for persistent updates"));
        }
        Ok(Self { model, ds, cfg })
    }

    pub fn config(&self) -> &AugmentConfig {
        &self.cfg
    }

    /// Prediction together with the per-epoch trace.
    pub fn predict_traced(&self, ctx: &ContextWindow) -> Result<Ft2RaOutput> {
        let f = self.model.forward(ctx)?;
        let nb = knn::search(self.ds, &f.seqout, self.cfg.neighbors, self.cfg.metric)?;
        augment::ft2ra_predict(&f.logits, &nb, self.ds, &self.cfg)
    }
}

impl Predictor for Ft2RaLm<'_> {
    fn context_len(&self) -> usize {
        self.model.context_len()
    }

    fn predict(&self, ctx: &ContextWindow) -> Result<Probs> {
        Ok(self.predict_traced(ctx)?.probs)
    }
}

/// Variant whose neighbor updates are written back to the datastore after
/// every query. Holds the datastore exclusively.
pub struct PersistentFt2RaLm<'a> {
    model: &'a ToyLm,
    ds: &'a mut Datastore,
    cfg: AugmentConfig,
}

impl<'a> PersistentFt2RaLm<'a> {
    pub fn new(model: &'a ToyLm, ds: &'a mut Datastore, mut cfg: AugmentConfig) -> Result<Self> {
        check_pair(model, ds)?;
        cfg.persist_updates = true;
        cfg.validate()?;
        Ok(Self { model, ds, cfg })
    }

    pub fn predict_traced(&mut self, ctx: &ContextWindow) -> Result<Ft2RaOutput> {
        let f = self.model.forward(ctx)?;
        let nb = knn::search(self.ds, &f.seqout, self.cfg.neighbors, self.cfg.metric)?;
        augment::ft2ra_predict_persist(&f.logits, &nb, self.ds, &self.cfg)
    }
}

impl PredictorMut for PersistentFt2RaLm<'_> {
    fn context_len(&self) -> usize {
        self.model.context_len()
    }

    fn predict_mut(&mut self, ctx: &ContextWindow) -> Result<Probs> {
        Ok(self.predict_traced(ctx)?.probs)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnnLmConfig {
    pub lambda: f64,
    pub neighbors: usize,
    #[serde(default)]
    pub metric: Metric,
}

impl Default for KnnLmConfig {
    fn default() -> Self {
        Self { lambda: 0.5, neighbors: 20, metric: Metric::L2 }
    }
}

/// kNN-LM interpolation baseline.
pub struct KnnLm<'a> {
    model: &'a ToyLm,
    ds: &'a Datastore,
    cfg: KnnLmConfig,
}

impl<'a> KnnLm<'a> {
    pub fn new(model: &'a ToyLm, ds: &'a Datastore, cfg: KnnLmConfig) -> Result<Self> {
        check_pair(model, ds)?;
        if !(0.0..=1.0).contains(&cfg.lambda) {
            return Err(Error::invalid(format!("lambda must lie in [0, 1], got {}", cfg.lambda)));
        }
        if cfg.neighbors == 0 {
            return Err(Error::invalid("number of neighbors must be at least 1"));
        }
        Ok(Self { model, ds, cfg })
    }
}

impl Predictor for KnnLm<'_> {
    fn context_len(&self) -> usize {
        self.model.context_len()
    }

    fn predict(&self, ctx: &ContextWindow) -> Result<Probs> {
        let f = self.model.forward(ctx)?;
        let nb = knn::search(self.ds, &f.seqout, self.cfg.neighbors, self.cfg.metric)?;
        let base = crate::prob::softmax(&f.logits)?;
        augment::knnlm_predict(&base, &nb, self.ds, self.cfg.lambda)
    }
}
