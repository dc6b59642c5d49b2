//! Token-level and line-level completion evaluation.

mod finetune;
pub mod metrics;
mod report;
mod run;
mod sweep;

pub use finetune::{compare_finetune, FinetuneComparison};
pub use metrics::{edit_similarity, exact_match, levenshtein};
pub use report::{Curve, EvalOrdering, EvalReport, Metrics, Point, SampleRecord};
pub use run::{evaluate, evaluate_sequential};
pub use sweep::{sweep, GridPoint, LineEval, SweepGrid, SweepRow};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::context::ContextWindow;
use crate::error::{Error, Result};
use crate::predict::{Predictor, PredictorMut};
use crate::vocab::{normalize_whitespace, TokenId, Vocab};

/// Cap on generated tokens per line.
pub const DEFAULT_MAX_TOKENS: usize = 100;

/// A teacher-forced next-token example.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSample {
    pub context: Vec<TokenId>,
    pub target: TokenId,
}

impl TokenSample {
    pub fn window(&self) -> ContextWindow {
        ContextWindow::new(self.context.clone())
    }
}

/// A line completion example: complete `reference` given `prompt`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineSample {
    pub prompt: Vec<TokenId>,
    pub reference: Vec<TokenId>,
}

/// Every full-context position `t` in `[n, len)` of the corpus.
pub fn token_samples(corpus: &[TokenId], n: usize) -> Vec<TokenSample> {
    (n..corpus.len()).map(|t| TokenSample { context: corpus[t - n..t].to_vec(), target: corpus[t] }).collect()
}

/// One sample per line with at least two tokens and a full context before
/// it: the prompt runs through the first half of the line and the reference
/// is the rest (without the `<EOL>`).
pub fn line_samples(corpus: &[TokenId], n: usize, eol: TokenId) -> Vec<LineSample> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, &tok) in corpus.iter().enumerate() {
        if tok != eol {
            continue;
        }
        let line = &corpus[start..i];
        if line.len() >= 2 && start >= n {
            let split = start + line.len() / 2;
            out.push(LineSample { prompt: corpus[split - n..split].to_vec(), reference: corpus[split..i].to_vec() });
        }
        start = i + 1;
    }
    out
}

/// Outcome of one teacher-forced prediction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub target: TokenId,
    pub predicted: TokenId,
}

impl TokenRecord {
    pub fn correct(&self) -> bool {
        self.target == self.predicted
    }
}

fn accuracy(records: &[TokenRecord]) -> f64 {
    let hits = records.iter().filter(|r| r.correct()).count();
    100.0 * hits as f64 / records.len() as f64
}

/// Token accuracy in percent, fanning out across samples.
pub fn eval_token<P: Predictor + ?Sized>(predictor: &P, testset: &[TokenSample]) -> Result<f64> {
    Ok(accuracy(&eval_token_records(predictor, testset)?))
}

/// Per-sample outcomes, in test-set order.
pub fn eval_token_records<P: Predictor + ?Sized>(predictor: &P, testset: &[TokenSample]) -> Result<Vec<TokenRecord>> {
    if testset.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    testset
        .par_iter()
        .map(|s| {
            let probs = predictor.predict(&s.window())?;
            Ok(TokenRecord { target: s.target, predicted: probs.argmax() })
        })
        .collect()
}

/// Sequential evaluation in test-set order, for stateful predictors.
pub fn eval_token_sequential<P: PredictorMut>(predictor: &mut P, testset: &[TokenSample]) -> Result<Vec<TokenRecord>> {
    if testset.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    testset
        .iter()
        .map(|s| {
            let probs = predictor.predict_mut(&s.window())?;
            Ok(TokenRecord { target: s.target, predicted: probs.argmax() })
        })
        .collect()
}

/// Token accuracy over records, in percent.
pub fn token_accuracy(records: &[TokenRecord]) -> f64 {
    accuracy(records)
}

/// Greedy decoding until a stop token (not emitted) or `max_tokens`.
///
/// Only the last `context_len` prompt tokens are used; shorter prompts must be
/// padded by the caller (see [`pad_prompt`]).
pub fn complete_line<P: PredictorMut + ?Sized>(
    predictor: &mut P,
    prompt: &[TokenId],
    max_tokens: usize,
    stop: &[TokenId],
) -> Result<Vec<TokenId>> {
    let n = predictor.context_len();
    if prompt.len() < n {
        return Err(Error::invalid(format!(
            "prompt has {} tokens, context length is {n}; pad it with <BOS>",
            prompt.len()
        )));
    }
    let mut ctx = ContextWindow::new(prompt[prompt.len() - n..].to_vec());
    let mut out = Vec::new();
    while out.len() < max_tokens {
        let next = predictor.predict_mut(&ctx)?.argmax();
        if stop.contains(&next) {
            break;
        }
        out.push(next);
        ctx.push(next);
    }
    Ok(out)
}

/// Left-pads `prompt` with `bos` up to `n` tokens.
pub fn pad_prompt(prompt: &[TokenId], n: usize, bos: TokenId) -> Vec<TokenId> {
    if prompt.len() >= n {
        return prompt.to_vec();
    }
    ContextWindow::from_prompt(prompt, n, bos).tokens().to_vec()
}

/// Outcome of one line completion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineRecord {
    pub prediction: Vec<TokenId>,
    pub exact: bool,
    pub similarity: f64,
}

/// Mean EM (percent of exact matches) and mean ES over the test set.
pub fn eval_line<P: Predictor + ?Sized>(
    predictor: &P,
    testset: &[LineSample],
    vocab: &Vocab,
    max_tokens: usize,
    stop: &[TokenId],
) -> Result<(f64, f64)> {
    let records = eval_line_records(predictor, testset, vocab, max_tokens, stop)?;
    Ok(line_scores(&records))
}

pub fn eval_line_records<P: Predictor + ?Sized>(
    predictor: &P,
    testset: &[LineSample],
    vocab: &Vocab,
    max_tokens: usize,
    stop: &[TokenId],
) -> Result<Vec<LineRecord>> {
    if testset.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    testset
        .par_iter()
        .map(|s| {
            let mut p = predictor;
            let prediction = complete_line(&mut p, &s.prompt, max_tokens, stop)?;
            score_line(prediction, &s.reference, vocab)
        })
        .collect()
}

pub fn line_scores(records: &[LineRecord]) -> (f64, f64) {
    let n = records.len() as f64;
    let em = records.iter().filter(|r| r.exact).count() as f64 * 100.0 / n;
    let es = records.iter().map(|r| r.similarity).sum::<f64>() / n;
    (em, es)
}

pub(crate) fn score_line(prediction: Vec<TokenId>, reference: &[TokenId], vocab: &Vocab) -> Result<LineRecord> {
    let exact = exact_match(&prediction, reference);
    let pred_s = normalize_whitespace(&vocab.decode(&prediction)?);
    let ref_s = normalize_whitespace(&vocab.decode(reference)?);
    Ok(LineRecord { similarity: edit_similarity(&pred_s, &ref_s), prediction, exact })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::Probs;

    /// Replays a fixed token schedule regardless of context.
    struct Scripted {
        v: usize,
        answer: fn(&ContextWindow) -> TokenId,
    }

    impl Predictor for Scripted {
        fn context_len(&self) -> usize {
            2
        }
        fn predict(&self, ctx: &ContextWindow) -> Result<Probs> {
            Ok(Probs::one_hot(self.v, (self.answer)(ctx)))
        }
    }

    fn ids(xs: &[u32]) -> Vec<TokenId> {
        xs.iter().map(|&x| TokenId(x)).collect()
    }

    #[test]
    fn perfect_and_partial_accuracy() {
        let corpus = ids(&[1, 2, 3, 4, 5, 6]);
        let set = token_samples(&corpus, 2);
        assert_eq!(set.len(), 4);
        // next token is always last + 1
        let oracle = Scripted { v: 10, answer: |c| TokenId(c.tokens()[1].0 + 1) };
        assert_eq!(eval_token(&oracle, &set).unwrap(), 100.0);
        let three_of_four = Scripted {
            v: 10,
            answer: |c| if c.tokens()[1].0 == 5 { TokenId(0) } else { TokenId(c.tokens()[1].0 + 1) },
        };
        assert_eq!(eval_token(&three_of_four, &set).unwrap(), 75.0);
        assert!(eval_token(&oracle, &[]).is_err());
    }

    #[test]
    fn completion_stops_and_caps() {
        let eol = TokenId(0);
        let immediate = Scripted { v: 4, answer: |_| TokenId(0) };
        let mut p = &immediate;
        assert!(complete_line(&mut p, &ids(&[1, 2]), 100, &[eol]).unwrap().is_empty());

        let never = Scripted { v: 4, answer: |_| TokenId(3) };
        let mut p = &never;
        let out = complete_line(&mut p, &ids(&[1, 2]), 100, &[eol]).unwrap();
        assert_eq!(out.len(), 100);
        assert!(out.iter().all(|&t| t == TokenId(3)));
        assert_eq!(complete_line(&mut p, &ids(&[9, 1, 2]), 7, &[eol]).unwrap().len(), 7);
        assert!(complete_line(&mut p, &ids(&[1]), 7, &[eol]).is_err());
        assert_eq!(pad_prompt(&ids(&[1]), 3, TokenId(5)), ids(&[5, 5, 1]));
    }

    #[test]
    fn line_samples_split_lines() {
        // a b c <EOL> d e f g <EOL> h <EOL>
        let corpus = ids(&[1, 2, 3, 0, 4, 5, 6, 7, 0, 8, 0]);
        let set = line_samples(&corpus, 2, TokenId(0));
        // first line has no full context; third is a single token
        assert_eq!(set.len(), 1);
        assert_eq!(set[0].prompt, ids(&[4, 5]));
        assert_eq!(set[0].reference, ids(&[6, 7]));
    }

    #[test]
    fn line_metrics_perfect_and_empty() {
        let mut vocab = Vocab::new();
        let corpus = vocab.encode_extend("a b c d\ne f g h\ni j k l\n");
        let eol = vocab.specials().eol;
        let set = line_samples(&corpus, 2, eol);
        assert_eq!(set.len(), 2);

        struct Replay<'a> {
            corpus: &'a [TokenId],
        }
        impl Predictor for Replay<'_> {
            fn context_len(&self) -> usize {
                2
            }
            fn predict(&self, ctx: &ContextWindow) -> Result<Probs> {
                let c = ctx.tokens();
                let pos = self.corpus.windows(2).position(|w| w == c).unwrap();
                Ok(Probs::one_hot(30, self.corpus[pos + 2]))
            }
        }
        let perfect = Replay { corpus: &corpus };
        assert_eq!(eval_line(&perfect, &set, &vocab, 100, &[eol]).unwrap(), (100.0, 100.0));

        let eol_only = Scripted { v: 30, answer: |_| TokenId(0) };
        assert_eq!(eval_line(&eol_only, &set, &vocab, 100, &[eol]).unwrap(), (0.0, 0.0));
    }
}
