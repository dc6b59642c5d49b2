use crate::error::{Error, Result};
use crate::vocab::TokenId;

/// A fixed-length window of preceding tokens, left-padded with `<BOS>`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ContextWindow {
    tokens: Vec<TokenId>,
}

impl ContextWindow {
    pub fn new(tokens: Vec<TokenId>) -> Self {
        Self { tokens }
    }

    /// The `n` tokens preceding position `t` of `seq` (i.e. `seq[t-n..t]`),
    /// padded on the left with `bos` when `t < n`.
    pub fn ending_before(seq: &[TokenId], t: usize, n: usize, bos: TokenId) -> Self {
        let t = t.min(seq.len());
        let start = t.saturating_sub(n);
        let pad = n - (t - start);
        let mut tokens = Vec::with_capacity(n);
        tokens.extend(std::iter::repeat_n(bos, pad));
        tokens.extend_from_slice(&seq[start..t]);
        Self { tokens }
    }

    /// The last `n` tokens of `prompt`, left-padded.
    pub fn from_prompt(prompt: &[TokenId], n: usize, bos: TokenId) -> Self {
        Self::ending_before(prompt, prompt.len(), n, bos)
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Checks length `n` and that every id is below `v`.
    pub fn validate(&self, n: usize, v: usize) -> Result<()> {
        if self.tokens.len() != n {
            return Err(Error::invalid(format!("context has {} tokens, expected {n}", self.tokens.len())));
        }
        if let Some(bad) = self.tokens.iter().find(|t| t.index() >= v) {
            return Err(Error::invalid(format!("context token {bad} out of range (v = {v})")));
        }
        Ok(())
    }

    /// Slides the window one token to the right.
    pub fn push(&mut self, next: TokenId) {
        if !self.tokens.is_empty() {
            self.tokens.remove(0);
            self.tokens.push(next);
        }
    }
}
