//! Line-level completion metrics.

use crate::vocab::TokenId;

/// Token-sequence equality. Literal normalization already happened in the
/// tokenizer, so two lines differing only inside a string literal match.
pub fn exact_match(pred: &[TokenId], reference: &[TokenId]) -> bool {
    pred == reference
}

/// Character-level Levenshtein distance.
pub fn levenshtein(a: &str, b: &str) -> usize {
    strsim::levenshtein(a, b)
}

/// `100 · (1 − lev(pred, ref) / max(|pred|, |ref|))`, lengths in characters.
/// Two empty strings score 100.
pub fn edit_similarity(pred: &str, reference: &str) -> f64 {
    let longest = pred.chars().count().max(reference.chars().count());
    if longest == 0 {
        return 100.0;
    }
    100.0 * (1.0 - levenshtein(pred, reference) as f64 / longest as f64)
}
