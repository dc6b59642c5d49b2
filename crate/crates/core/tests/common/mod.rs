#![allow(dead_code)]

use ft2ra_core::datastore::{Datastore, DatastoreEntry, DatastoreMeta};
use ft2ra_core::eval::{token_samples, TokenSample};
use ft2ra_core::synth::{generate, SynthConfig};
use ft2ra_core::toylm::{train, ToyLm, ToyLmDims, TrainConfig};
use ft2ra_core::vocab::{TokenId, Vocab};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CONTEXT: usize = 5;
pub const D_EMB: usize = 16;
pub const DMODEL: usize = 32;

pub struct Fixture {
    pub vocab: Vocab,
    pub base: Vec<TokenId>,
    pub domain_train: Vec<TokenId>,
    pub domain_test: Vec<TokenId>,
    pub model: ToyLm,
    pub ds: Datastore,
    pub test: Vec<TokenSample>,
}

pub fn pretrain_config() -> TrainConfig {
    TrainConfig { eta_theta: 0.1, epochs: 3, batch: 16, seed: 11, ..TrainConfig::default() }
}

pub fn fixture() -> Fixture {
    let corpora = generate(&SynthConfig::default());
    let mut vocab = Vocab::new();
    let base = vocab.encode_extend(&corpora.base);
    let domain_train = vocab.encode_extend(&corpora.domain_train);
    let domain_test = vocab.encode_extend(&corpora.domain_test);
    let dims = ToyLmDims { v: vocab.len(), n: CONTEXT, d_emb: D_EMB, dmodel: DMODEL };
    let init = ToyLm::new(dims, 3).unwrap();
    let model = train(&init, &base, &pretrain_config()).unwrap();
    let meta = DatastoreMeta::describe(&model.fingerprint(), "domain-train", 0);
    let ds = Datastore::build(&model, &domain_train, meta).unwrap();
    let test = token_samples(&domain_test, CONTEXT);
    Fixture { vocab, base, domain_train, domain_test, model, ds, test }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn test_meta() -> DatastoreMeta {
    DatastoreMeta::describe("test", "synthetic", 0)
}

/// `count` entries with keys in [-1, 1]^dmodel, random targets and logits.
pub fn random_datastore<R: Rng>(rng: &mut R, count: usize, v: usize, dmodel: usize) -> Datastore {
    let entries = (0..count)
        .map(|_| DatastoreEntry {
            key: (0..dmodel).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            target: TokenId(rng.gen_range(0..v as u32)),
            logits: (0..v).map(|_| rng.gen_range(-3.0..3.0)).collect(),
        })
        .collect();
    Datastore::from_entries(v, dmodel, entries, test_meta()).unwrap()
}

pub fn random_model<R: Rng>(rng: &mut R) -> ToyLm {
    let dims = ToyLmDims {
        v: rng.gen_range(2..40),
        n: rng.gen_range(1..6),
        d_emb: rng.gen_range(1..9),
        dmodel: rng.gen_range(1..17),
    };
    // scale weights up so seqout is not tiny
    let base = ToyLm::new(dims, rng.gen()).unwrap();
    let scale = |xs: &[f64]| xs.iter().map(|x| x * 20.0).collect::<Vec<_>>();
    let embed: Vec<f64> = (0..dims.v * dims.d_emb).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w1: Vec<f64> = (0..dims.dmodel * dims.n * dims.d_emb).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b1: Vec<f64> = (0..dims.dmodel).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let w = scale(base.lm_head_weights());
    let b: Vec<f64> = (0..dims.v).map(|_| rng.gen_range(-1.0..1.0)).collect();
    ToyLm::from_parts(dims, embed, w1, b1, w, b).unwrap()
}

pub fn random_context<R: Rng>(rng: &mut R, model: &ToyLm) -> ft2ra_core::ContextWindow {
    let v = model.vocab_size() as u32;
    ft2ra_core::ContextWindow::new((0..model.context_len()).map(|_| TokenId(rng.gen_range(0..v))).collect())
}
