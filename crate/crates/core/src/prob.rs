//! Logits and probability vectors.

use std::ops::Deref;

use crate::error::{Error, Result};
use crate::vocab::TokenId;

/// Tolerance on the sum of a probability vector.
pub const PROB_SUM_TOL: f64 = 1e-9;

/// Unnormalized scores over the vocabulary. All entries are finite.
#[derive(Clone, Debug, PartialEq)]
pub struct Logits(Vec<f64>);

impl Logits {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("logit {i} is not finite")));
        }
        Ok(Self(values))
    }

    pub fn zeros(v: usize) -> Self {
        Self(vec![0.0; v])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn argmax(&self) -> TokenId {
        TokenId::from(argmax(&self.0))
    }

    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        Self(values)
    }
}

impl Deref for Logits {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// A distribution over the vocabulary: non-negative, summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct Probs(Vec<f64>);

impl Probs {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("empty probability vector"));
        }
        if let Some(i) = values.iter().position(|&p| !(p.is_finite() && p >= 0.0)) {
            return Err(Error::invalid(format!("probability {i} is negative or not finite")));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::invalid(format!("probabilities sum to {sum}")));
        }
        Ok(Self(values))
    }

    pub fn uniform(v: usize) -> Self {
        Self(vec![1.0 / v as f64; v])
    }

    pub fn one_hot(v: usize, target: TokenId) -> Self {
        let mut p = vec![0.0; v];
        p[target.index()] = 1.0;
        Self(p)
    }

    pub fn argmax(&self) -> TokenId {
        TokenId::from(argmax(&self.0))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        Self(values)
    }
}

impl Deref for Probs {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Numerically stable softmax (max-subtraction).
pub fn softmax(logits: &[f64]) -> Result<Probs> {
    if logits.is_empty() {
        return Err(Error::invalid("softmax of an empty vector"));
    }
    if let Some(i) = logits.iter().position(|x| !x.is_finite()) {
        return Err(Error::invalid(format!("logit {i} is not finite")));
    }
    Ok(Probs(softmax_finite(logits)))
}

/// Softmax for inputs already known to be finite and non-empty.
pub(crate) fn softmax_finite(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Cross-entropy `-ln p[target]`.
pub fn cross_entropy(probs: &[f64], target: TokenId) -> f64 {
    -probs[target.index()].ln()
}

/// Cross-entropy of `softmax(logits)` against `target`, via log-sum-exp.
pub fn cross_entropy_logits(logits: &[f64], target: TokenId) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
    lse - logits[target.index()]
}

#[cfg(test)]
#[allow(clippy::excessive_precision)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn uniform_on_equal_logits() {
        let p = softmax(&[0.0; 4]).unwrap();
        for x in p.iter() {
            assert_eq!(*x, 0.25);
        }
    }

    #[test]
    fn ln2_gives_two_thirds() {
        let p = softmax(&[std::f64::consts::LN_2, 0.0]).unwrap();
        assert_relative_eq!(p[0], 2.0 / 3.0, max_relative = 1e-15);
        assert_relative_eq!(p[1], 1.0 / 3.0, max_relative = 1e-15);
    }

    #[test]
    fn matches_high_precision_reference() {
        // 40-digit evaluation of exp(x_i) / sum_j exp(x_j).
        let expected = [
            0.925_267_434_242_000_688_952_112_9,
            0.001_391_083_324_625_222_598_437_26,
            0.004_618_559_287_024_819_787_569_179,
            0.068_722_923_146_349_268_661_880_66,
        ];
        let p = softmax(&[5.3, -1.2, 0.0, 2.7]).unwrap();
        for (a, b) in p.iter().zip(expected) {
            assert_relative_eq!(*a, b, max_relative = 1e-14);
        }
    }

    #[test]
    fn rejects_non_finite() {
        assert!(softmax(&[0.0, f64::NAN]).is_err());
        assert!(softmax(&[f64::INFINITY, 0.0]).is_err());
        assert!(Logits::new(vec![1.0, f64::NEG_INFINITY]).is_err());
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let p = softmax(&[1000.0, 999.0]).unwrap();
        assert!(p.iter().all(|x| x.is_finite()));
        assert_relative_eq!(p[0] + p[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }

    fn logits_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-50.0f64..50.0, 2..64)
    }

    proptest! {
        #[test]
        fn shift_invariance(l in logits_strategy(), c in -100.0f64..100.0) {
            let a = softmax(&l).unwrap();
            let shifted: Vec<f64> = l.iter().map(|x| x + c).collect();
            let b = softmax(&shifted).unwrap();
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(y.abs()), "{x} vs {y}");
            }
        }

        #[test]
        fn argmax_preserved(l in logits_strategy()) {
            let p = softmax(&l).unwrap();
            prop_assert_eq!(argmax(&p), argmax(&l));
        }

        #[test]
        fn valid_distribution(l in logits_strategy()) {
            let p = softmax(&l).unwrap();
            prop_assert!(Probs::new(p.into_inner()).is_ok());
        }
    }
}
