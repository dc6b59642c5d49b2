//! Grid sweeps over FT2Ra and kNN-LM hyperparameters.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{self, AugmentConfig, WeightingStrategy};
use crate::datastore::Datastore;
use crate::error::{Error, Result};
use crate::eval::report::{Curve, EvalOrdering, EvalReport, Metrics};
use crate::eval::{eval_line, LineSample, TokenSample};
use crate::knn::{self, Metric, NeighborSet};
use crate::predict::{Ft2RaLm, KnnLm, KnnLmConfig, OriginalLm};
use crate::prob::softmax;
use crate::toylm::ToyLm;
use crate::vocab::{TokenId, Vocab};

/// Values to combine. FT2Ra points are the product strategy × N × η × E;
/// kNN-LM points are N × λ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub include_original: bool,
    pub iters: Vec<usize>,
    pub etas: Vec<f64>,
    pub neighbors: Vec<usize>,
    pub strategies: Vec<WeightingStrategy>,
    pub lambdas: Vec<f64>,
    #[serde(default)]
    pub metric: Metric,
    #[serde(default)]
    pub reset_query: bool,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            include_original: true,
            iters: vec![7],
            etas: vec![5.0],
            neighbors: vec![20],
            strategies: vec![WeightingStrategy::Rec],
            lambdas: Vec::new(),
            metric: Metric::L2,
            reset_query: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum GridPoint {
    Original,
    Ft2ra(AugmentConfig),
    Knnlm(KnnLmConfig),
}

impl GridPoint {
    pub fn label(&self) -> String {
        match self {
            GridPoint::Original => "original".to_string(),
            GridPoint::Ft2ra(c) => format!("ft2ra {} N={} eta={} E={}", c.strategy, c.neighbors, c.eta_logits, c.iters),
            GridPoint::Knnlm(c) => format!("knnlm N={} lambda={}", c.neighbors, c.lambda),
        }
    }

    pub(crate) fn neighbors(&self) -> usize {
        match self {
            GridPoint::Original => 0,
            GridPoint::Ft2ra(c) => c.neighbors,
            GridPoint::Knnlm(c) => c.neighbors,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub point: GridPoint,
    pub token_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line_em: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line_es: Option<f64>,
}

impl SweepGrid {
    /// Grid points in traversal order: original, then FT2Ra by
    /// strategy, N, η, E (E varies fastest), then kNN-LM by N, λ.
    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        if self.include_original {
            out.push(GridPoint::Original);
        }
        for &strategy in &self.strategies {
            for &neighbors in &self.neighbors {
                for &eta_logits in &self.etas {
                    for &iters in &self.iters {
                        out.push(GridPoint::Ft2ra(AugmentConfig {
                            eta_logits,
                            iters,
                            neighbors,
                            strategy,
                            reset_query_each_epoch: self.reset_query,
                            persist_updates: false,
                            metric: self.metric,
                        }));
                    }
                }
            }
        }
        if !self.lambdas.is_empty() {
            for &neighbors in &self.neighbors {
                for &lambda in &self.lambdas {
                    out.push(GridPoint::Knnlm(KnnLmConfig { lambda, neighbors, metric: self.metric }));
                }
            }
        }
        out
    }
}

/// Line-level evaluation to run alongside token accuracy.
#[derive(Clone, Copy, Debug)]
pub struct LineEval<'a> {
    pub samples: &'a [LineSample],
    pub vocab: &'a Vocab,
    pub max_tokens: usize,
    pub stop: &'a [TokenId],
}

struct Cached {
    logits: Vec<f64>,
    /// Retrieved at the largest N with squared distances.
    neighbors: NeighborSet,
    target: TokenId,
}

/// Evaluates every grid point on `testset`. The forward pass and a single
/// retrieval at the largest N are shared by all points.
pub fn sweep(
    model: &ToyLm,
    ds: &Datastore,
    testset: &[TokenSample],
    grid: &SweepGrid,
    lines: Option<LineEval<'_>>,
) -> Result<EvalReport> {
    let points = grid.points();
    if points.is_empty() {
        return Err(Error::invalid("sweep grid is empty"));
    }
    if testset.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    ds.check_compatible(model.vocab_size(), model.dmodel())?;
    let accs = token_accuracies(model, ds, testset, &points)?;
    let mut rows = Vec::with_capacity(points.len());
    for (point, token_accuracy) in points.into_iter().zip(accs) {
        let (line_em, line_es) = match lines {
            Some(l) => {
                let (em, es) = eval_point_lines(model, ds, &point, l)?;
                (Some(em), Some(es))
            }
            None => (None, None),
        };
        rows.push(SweepRow { point, token_accuracy, line_em, line_es });
    }

    let curves = curves(grid, &rows);
    let best = rows.iter().max_by(|a, b| a.token_accuracy.total_cmp(&b.token_accuracy)).expect("non-empty grid");
    Ok(EvalReport {
        method: "sweep".to_string(),
        config: serde_json::to_value(grid)?,
        metrics: Metrics { token_accuracy: Some(best.token_accuracy), line_em: best.line_em, line_es: best.line_es },
        ordering: EvalOrdering::Parallel,
        samples: Vec::new(),
        curves,
        rows,
    })
}

/// Token accuracy of every point, sharing one forward pass and one retrieval
/// at the largest N per sample.
pub(crate) fn token_accuracies(
    model: &ToyLm,
    ds: &Datastore,
    testset: &[TokenSample],
    points: &[GridPoint],
) -> Result<Vec<f64>> {
    if testset.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    let max_n = points.iter().map(GridPoint::neighbors).max().unwrap_or(0);
    let cache: Vec<Cached> = testset
        .par_iter()
        .map(|s| {
            let f = model.forward(&s.window())?;
            let neighbors =
                if max_n > 0 { knn::search(ds, &f.seqout, max_n, Metric::L2Sq)? } else { NeighborSet::default() };
            Ok(Cached { logits: f.logits.into_inner(), neighbors, target: s.target })
        })
        .collect::<Result<_>>()?;

    // FT2Ra points differing only in E share one run at the largest E: the
    // first e epochs of that run are exactly the run with E = e.
    let mut groups: Vec<AugmentConfig> = Vec::new();
    for p in points {
        if let GridPoint::Ft2ra(cfg) = p {
            match groups.iter_mut().find(|g| same_but_iters(g, cfg)) {
                Some(g) => g.iters = g.iters.max(cfg.iters),
                None => groups.push(cfg.clone()),
            }
        }
    }
    let per_epoch: Vec<Vec<Vec<TokenId>>> = groups
        .iter()
        .map(|g| cache.par_iter().map(|c| epoch_predictions(c, ds, g)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;

    let n = cache.len() as f64;
    points
        .iter()
        .map(|point| {
            let hits = match point {
                GridPoint::Ft2ra(cfg) => {
                    let g = groups.iter().position(|g| same_but_iters(g, cfg)).expect("grouped");
                    per_epoch[g].iter().zip(&cache).filter(|(preds, c)| preds[cfg.iters] == c.target).count()
                }
                _ => cache
                    .par_iter()
                    .map(|c| predict_cached(c, ds, point).map(|t| t == c.target))
                    .collect::<Result<Vec<bool>>>()?
                    .into_iter()
                    .filter(|&h| h)
                    .count(),
            };
            Ok(100.0 * hits as f64 / n)
        })
        .collect()
}

fn same_but_iters(a: &AugmentConfig, b: &AugmentConfig) -> bool {
    AugmentConfig { iters: 0, ..a.clone() } == AugmentConfig { iters: 0, ..b.clone() }
}

/// Predictions after 0, 1, ..., `cfg.iters` epochs.
fn epoch_predictions(c: &Cached, ds: &Datastore, cfg: &AugmentConfig) -> Result<Vec<TokenId>> {
    let nb = with_metric(c.neighbors.prefix(cfg.neighbors), cfg.metric);
    let out = augment::ft2ra_predict(&c.logits, &nb, ds, cfg)?;
    let mut preds = Vec::with_capacity(cfg.iters + 1);
    preds.push(softmax(&c.logits)?.argmax());
    for r in &out.trace.records {
        preds.push(softmax(&r.query_logits)?.argmax());
    }
    Ok(preds)
}

fn predict_cached(c: &Cached, ds: &Datastore, point: &GridPoint) -> Result<TokenId> {
    Ok(match point {
        GridPoint::Original => softmax(&c.logits)?.argmax(),
        GridPoint::Ft2ra(cfg) => epoch_predictions(c, ds, cfg)?[cfg.iters],
        GridPoint::Knnlm(cfg) => {
            let nb = with_metric(c.neighbors.prefix(cfg.neighbors), cfg.metric);
            augment::knnlm_predict(&softmax(&c.logits)?, &nb, ds, cfg.lambda)?.argmax()
        }
    })
}

fn with_metric(mut nb: NeighborSet, metric: Metric) -> NeighborSet {
    if metric == Metric::L2 {
        nb.distances.iter_mut().for_each(|d| *d = d.sqrt());
    }
    nb
}

fn eval_point_lines(model: &ToyLm, ds: &Datastore, point: &GridPoint, l: LineEval<'_>) -> Result<(f64, f64)> {
    match point {
        GridPoint::Original => eval_line(&OriginalLm { model }, l.samples, l.vocab, l.max_tokens, l.stop),
        GridPoint::Ft2ra(cfg) => {
            eval_line(&Ft2RaLm::new(model, ds, cfg.clone())?, l.samples, l.vocab, l.max_tokens, l.stop)
        }
        GridPoint::Knnlm(cfg) => eval_line(&KnnLm::new(model, ds, *cfg)?, l.samples, l.vocab, l.max_tokens, l.stop),
    }
}

/// Token accuracy over E for each (strategy, N, η), over N for each
/// (strategy, η, E) and over λ for each N, whenever that axis has more than
/// one value.
fn curves(grid: &SweepGrid, rows: &[SweepRow]) -> Vec<Curve> {
    let ft: Vec<(&AugmentConfig, f64)> = rows
        .iter()
        .filter_map(|r| match &r.point {
            GridPoint::Ft2ra(c) => Some((c, r.token_accuracy)),
            _ => None,
        })
        .collect();
    let mut out = Vec::new();
    if grid.iters.len() > 1 {
        for s in &grid.strategies {
            for &n in &grid.neighbors {
                for &eta in &grid.etas {
                    let mut c = Curve::new(format!("ft2ra {s} N={n} eta={eta} over E"), "E", "token_accuracy");
                    for (cfg, acc) in &ft {
                        if cfg.strategy == *s && cfg.neighbors == n && cfg.eta_logits == eta {
                            c.push(cfg.iters as f64, *acc);
                        }
                    }
                    out.push(c);
                }
            }
        }
    }
    if grid.neighbors.len() > 1 {
        for s in &grid.strategies {
            for &eta in &grid.etas {
                for &e in &grid.iters {
                    let mut c = Curve::new(format!("ft2ra {s} eta={eta} E={e} over N"), "N", "token_accuracy");
                    for (cfg, acc) in &ft {
                        if cfg.strategy == *s && cfg.eta_logits == eta && cfg.iters == e {
                            c.push(cfg.neighbors as f64, *acc);
                        }
                    }
                    out.push(c);
                }
            }
        }
    }
    if grid.lambdas.len() > 1 {
        for &n in &grid.neighbors {
            let mut c = Curve::new(format!("knnlm N={n} over lambda"), "lambda", "token_accuracy");
            for r in rows {
                if let GridPoint::Knnlm(k) = &r.point {
                    if k.neighbors == n {
                        c.push(k.lambda, r.token_accuracy);
                    }
                }
            }
            out.push(c);
        }
    }
    out
}
