//! Retrieval-augmented next-token prediction for a small code language model.
//!
//! [`augment`] holds the iterative neighbor-driven logits update (FT2Ra) and
//! the kNN-LM interpolation baseline; [`toylm`] a small model whose lm-head is
//! exactly linear; [`datastore`] and [`knn`] the retrieval side; [`eval`] the
//! token- and line-level harness.

mod binio;

pub mod augment;
pub mod context;
pub mod datastore;
pub mod error;
pub mod eval;
pub mod knn;
pub mod predict;
pub mod prob;
pub mod synth;
pub mod toylm;
pub mod vocab;

pub use augment::{ft2ra_predict, knnlm_predict, AugmentConfig, Ft2RaOutput, Trace, WeightingStrategy};
pub use context::ContextWindow;
pub use datastore::{Datastore, DatastoreMeta};
pub use error::{Error, Result};
pub use knn::{Metric, NeighborSet};
pub use predict::{Ft2RaLm, KnnLm, KnnLmConfig, Method, OriginalLm, PersistentFt2RaLm, Predictor, PredictorMut};
pub use prob::{Logits, Probs};
pub use toylm::{ParamGroup, ToyLm, ToyLmDims, TrainConfig};
pub use vocab::{TokenId, Vocab};
