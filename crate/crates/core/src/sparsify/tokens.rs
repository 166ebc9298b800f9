//! CKA-adjusted token keep scores for dynamic token sparsification.
//!
//! Each token is represented by its feature vectors across the batch:
//! token `i` contributes an `examples × d` matrix, and CKA between tokens is
//! computed over the example dimension.

use crate::error::{Error, Result};
use crate::similarity::{CenteredGram, FeatureMap};

#[derive(Clone, Debug)]
pub struct TokenBatch {
    tokens: Vec<FeatureMap>,
    keep_probs: Vec<f64>,
}

impl TokenBatch {
    pub fn new(tokens: Vec<FeatureMap>, keep_probs: Vec<f64>) -> Result<Self> {
        if tokens.len() != keep_probs.len() {
            return Err(Error::shape(
                "token batch",
                format!("{} tokens vs {} keep probabilities", tokens.len(), keep_probs.len()),
            ));
        }
        if keep_probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("keep probabilities must lie in [0, 1]"));
        }
        if let Some(first) = tokens.first() {
            if tokens.iter().any(|t| t.examples() != first.examples()) {
                return Err(Error::shape("token batch", "tokens differ in example count"));
            }
        }
        Ok(TokenBatch { tokens, keep_probs })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[FeatureMap] {
        &self.tokens
    }

    pub fn keep_probs(&self) -> &[f64] {
        &self.keep_probs
    }
}

/// `π′_i = π_i − Σ_{j≠i} CKA(X_i, X_j)`. Values can be negative.
pub fn token_keep_probs(batch: &TokenBatch) -> Result<Vec<f64>> {
    if batch.len() < 2 {
        return Err(Error::invalid("token scoring needs at least 2 tokens"));
    }
    let grams: Vec<CenteredGram> = batch.tokens.iter().map(|t| CenteredGram::of(t.values())).collect();
    if let Some(i) = grams.iter().position(CenteredGram::is_degenerate) {
        return Err(Error::Degenerate(format!("token {i} has zero variance across the batch")));
    }
    let n = grams.len();
    let mut penalty = vec![0.0; n];
    for i in 0..n {
        for j in i + 1..n {
            let c = grams[i].cka(&grams[j]);
            penalty[i] += c;
            penalty[j] += c;
        }
    }
    Ok(batch.keep_probs.iter().zip(&penalty).map(|(p, c)| p - c).collect())
}

/// Keeps the `⌈r·N⌉` highest-scoring tokens; ties go to the lower index.
/// Returned indices ascend.
pub fn token_select(pi_prime: &[f64], keep_ratio: f64) -> Result<Vec<usize>> {
    if !(keep_ratio > 0.0 && keep_ratio <= 1.0) {
        return Err(Error::invalid("keep ratio must be in (0, 1]"));
    }
    let n = pi_prime.len();
    // guard against r·N landing a hair above an integer
    let keep = ((keep_ratio * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| pi_prime[b].total_cmp(&pi_prime[a]).then(a.cmp(&b)));
    let mut kept = order[..keep.min(n)].to_vec();
    kept.sort_unstable();
    Ok(kept)
}
