//! Random inputs shared by the benchmarks.

use ft2ra_core::context::ContextWindow;
use ft2ra_core::datastore::{Datastore, DatastoreMeta};
use ft2ra_core::toylm::{ToyLm, ToyLmDims};
use ft2ra_core::vocab::TokenId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `count` entries with uniform keys in [-1, 1) and logits in [-4, 4).
pub fn datastore(rng: &mut ChaCha8Rng, count: usize, v: usize, dmodel: usize) -> Datastore {
    let mut ds = Datastore::empty(v, dmodel, DatastoreMeta::describe("bench", "random", 0)).unwrap();
    let mut key = vec![0.0; dmodel];
    let mut logits = vec![0.0; v];
    for _ in 0..count {
        key.iter_mut().for_each(|k| *k = rng.gen_range(-1.0..1.0));
        logits.iter_mut().for_each(|l| *l = rng.gen_range(-4.0..4.0));
        ds.push(&key, TokenId(rng.gen_range(0..v as u32)), &logits).unwrap();
    }
    ds
}

pub fn query(rng: &mut ChaCha8Rng, dmodel: usize) -> Vec<f64> {
    (0..dmodel).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn model(v: usize, n: usize, d_emb: usize, dmodel: usize) -> ToyLm {
    ToyLm::new(ToyLmDims { v, n, d_emb, dmodel }, 1).unwrap()
}

pub fn context(rng: &mut ChaCha8Rng, v: usize, n: usize) -> ContextWindow {
    ContextWindow::new((0..n).map(|_| TokenId(rng.gen_range(0..v as u32))).collect())
}
