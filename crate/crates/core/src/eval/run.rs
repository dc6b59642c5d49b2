//! Single-method evaluation into a full report.

use crate::error::Result;
use crate::eval::report::{EvalOrdering, EvalReport, Metrics, SampleRecord};
use crate::eval::sweep::LineEval;
use crate::eval::{
    complete_line, eval_line_records, eval_token_records, line_scores, score_line, token_accuracy, LineRecord,
    TokenRecord, TokenSample,
};
use crate::predict::{Predictor, PredictorMut};

/// Token accuracy (and line EM/ES when `lines` is given) for one predictor,
/// with one record per sample. Samples are evaluated independently.
pub fn evaluate<P: Predictor + ?Sized>(
    method: &str,
    config: serde_json::Value,
    predictor: &P,
    tokens: &[TokenSample],
    lines: Option<LineEval<'_>>,
) -> Result<EvalReport> {
    let token_records = eval_token_records(predictor, tokens)?;
    let line_records = match lines {
        Some(l) => Some(eval_line_records(predictor, l.samples, l.vocab, l.max_tokens, l.stop)?),
        None => None,
    };
    assemble(method, config, EvalOrdering::Parallel, &token_records, line_records, lines)
}

/// As [`evaluate`], in corpus order, for predictors whose state changes
/// between queries. Token samples run first, then lines.
pub fn evaluate_sequential<P: PredictorMut>(
    method: &str,
    config: serde_json::Value,
    predictor: &mut P,
    tokens: &[TokenSample],
    lines: Option<LineEval<'_>>,
) -> Result<EvalReport> {
    let token_records = crate::eval::eval_token_sequential(predictor, tokens)?;
    let line_records = match lines {
        Some(l) => {
            if l.samples.is_empty() {
                return Err(crate::error::Error::invalid("empty test set"));
            }
            let mut out = Vec::with_capacity(l.samples.len());
            for s in l.samples {
                let prediction = complete_line(predictor, &s.prompt, l.max_tokens, l.stop)?;
                out.push(score_line(prediction, &s.reference, l.vocab)?);
            }
            Some(out)
        }
        None => None,
    };
    assemble(method, config, EvalOrdering::Sequential, &token_records, line_records, lines)
}

fn assemble(
    method: &str,
    config: serde_json::Value,
    ordering: EvalOrdering,
    tokens: &[TokenRecord],
    lines: Option<Vec<LineRecord>>,
    line_eval: Option<LineEval<'_>>,
) -> Result<EvalReport> {
    let mut samples: Vec<SampleRecord> = tokens
        .iter()
        .enumerate()
        .map(|(index, r)| SampleRecord::Token { index, target: r.target, predicted: r.predicted, correct: r.correct() })
        .collect();
    let mut metrics = Metrics { token_accuracy: Some(token_accuracy(tokens)), ..Metrics::default() };
    if let (Some(records), Some(l)) = (lines, line_eval) {
        let (em, es) = line_scores(&records);
        metrics.line_em = Some(em);
        metrics.line_es = Some(es);
        for (index, (r, s)) in records.into_iter().zip(l.samples).enumerate() {
            samples.push(SampleRecord::Line {
                index,
                prediction: l.vocab.decode(&r.prediction)?,
                reference: l.vocab.decode(&s.reference)?,
                exact: r.exact,
                similarity: r.similarity,
            });
        }
    }
    Ok(EvalReport {
        method: method.to_string(),
        config,
        metrics,
        ordering,
        samples,
        rows: Vec::new(),
        curves: Vec::new(),
    })
}
