//! Exact nearest-neighbor search over datastore keys.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datastore::Datastore;
use crate::error::{Error, Result};

/// Below this many keys the scan stays on the calling thread.
const PARALLEL_MIN_KEYS: usize = 4096;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// Euclidean distance.
    #[default]
    L2,
    /// Squared Euclidean distance.
    L2Sq,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::L2 => "l2",
            Metric::L2Sq => "l2sq",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l2" => Ok(Metric::L2),
            "l2sq" => Ok(Metric::L2Sq),
            _ => Err(Error::invalid(format!("unknown metric {s:?} (expected l2 or l2sq)"))),
        }
    }
}

/// Retrieved entries, nearest first; ties resolved by ascending entry index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NeighborSet {
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
}

impl NeighborSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// The first `n` neighbors. Equal to a fresh search with `n` neighbors.
    pub fn prefix(&self, n: usize) -> NeighborSet {
        let n = n.min(self.len());
        NeighborSet { indices: self.indices[..n].to_vec(), distances: self.distances[..n].to_vec() }
    }
}

pub fn search(ds: &Datastore, query: &[f64], n: usize, metric: Metric) -> Result<NeighborSet> {
    search_keys(ds.keys(), ds.dmodel(), query, n, metric)
}

/// Brute-force search over row-major `keys` of width `dim`.
///
/// Ranking always uses squared distance, so both metrics yield the same order.
pub fn search_keys(keys: &[f64], dim: usize, query: &[f64], n: usize, metric: Metric) -> Result<NeighborSet> {
    if n == 0 {
        return Err(Error::invalid("number of neighbors must be at least 1"));
    }
    if query.len() != dim {
        return Err(Error::invalid(format!("query has {} components, keys have {dim}", query.len())));
    }
    if dim == 0 || keys.is_empty() {
        return Ok(NeighborSet::default());
    }
    let count = keys.len() / dim;
    let sq: Vec<f64> = if count >= PARALLEL_MIN_KEYS {
        keys.par_chunks_exact(dim).map(|k| sq_dist(k, query)).collect()
    } else {
        keys.chunks_exact(dim).map(|k| sq_dist(k, query)).collect()
    };

    let by_dist = |a: &usize, b: &usize| -> Ordering { sq[*a].total_cmp(&sq[*b]).then(a.cmp(b)) };
    let mut order: Vec<usize> = (0..count).collect();
    let k = n.min(count);
    if k < count {
        order.select_nth_unstable_by(k - 1, by_dist);
        order.truncate(k);
    }
    order.sort_unstable_by(by_dist);

    let distances = order
        .iter()
        .map(|&i| match metric {
            Metric::L2 => sq[i].sqrt(),
            Metric::L2Sq => sq[i],
        })
        .collect();
    Ok(NeighborSet { indices: order, distances })
}

/// Four independent accumulators so the loop vectorizes.
#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ah, at) = a.split_at(a.len() - a.len() % 4);
    let (bh, bt) = b.split_at(ah.len());
    for (x, y) in ah.chunks_exact(4).zip(bh.chunks_exact(4)) {
        for i in 0..4 {
            let d = x[i] - y[i];
            acc[i] += d * d;
        }
    }
    let tail: f64 = at.iter().zip(bt).map(|(x, y)| (x - y) * (x - y)).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
