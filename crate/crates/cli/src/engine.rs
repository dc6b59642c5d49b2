//! The predictor behind `complete` and `eval`, chosen by --method.

use ft2ra_core::augment::Trace;
use ft2ra_core::context::ContextWindow;
use ft2ra_core::predict::{Ft2RaLm, KnnLm, OriginalLm, PersistentFt2RaLm, Predictor, PredictorMut};
use ft2ra_core::prob::Probs;

pub enum Engine<'a> {
    Original(OriginalLm<'a>),
    Ft2ra(Ft2RaLm<'a>),
    Persistent(PersistentFt2RaLm<'a>),
    Knnlm(KnnLm<'a>),
}

impl Engine<'_> {
    /// Shared-access view, if this engine has no per-query state.
    pub fn shared(&self) -> Option<&dyn Predictor> {
        match self {
            Engine::Original(p) => Some(p),
            Engine::Ft2ra(p) => Some(p),
            Engine::Knnlm(p) => Some(p),
            Engine::Persistent(_) => None,
        }
    }
}

/// Keeps the trace of every FT2Ra prediction when `record` is set.
pub struct Tracing<'e, 'a> {
    pub engine: &'e mut Engine<'a>,
    pub record: bool,
    pub traces: Vec<Trace>,
}

impl PredictorMut for Tracing<'_, '_> {
    fn context_len(&self) -> usize {
        match &*self.engine {
            Engine::Original(p) => p.context_len(),
            Engine::Ft2ra(p) => p.context_len(),
            Engine::Persistent(p) => p.context_len(),
            Engine::Knnlm(p) => p.context_len(),
        }
    }

    fn predict_mut(&mut self, ctx: &ContextWindow) -> ft2ra_core::Result<Probs> {
        let out = match &mut *self.engine {
            Engine::Original(p) => return p.predict(ctx),
            Engine::Knnlm(p) => return p.predict(ctx),
            Engine::Ft2ra(p) => p.predict_traced(ctx)?,
            Engine::Persistent(p) => p.predict_traced(ctx)?,
        };
        if self.record {
            self.traces.push(out.trace);
        }
        Ok(out.probs)
    }
}
