// SPDX-License-Identifier: Apache-2.0

//! Decoding algorithms over an abstract next-token scorer.
//!
//! Every decoder takes a non-empty prefix and returns only the newly emitted
//! tokens. Ties are always broken towards the lowest token id (and, for beam
//! finalists, the lexicographically smallest sequence).

mod beam;
mod contrastive;
mod ensemble;
mod greedy;
mod nucleus;
mod process;
mod toy;

pub use beam::beam_decode;
pub use contrastive::contrastive_decode;
pub use ensemble::ensemble_greedy_decode;
pub use greedy::greedy_decode;
pub use nucleus::nucleus_decode;
pub use process::{ProcessLm, ProcessLmError};
pub use toy::{toy_lm_from_tables, ToyLm, ToyLmError};

use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenizer::TokenId;

/// A next-token scorer.
///
/// Implementations must be pure in `prefix` and safe to query from several
/// threads at once.
pub trait LanguageModel: Send + Sync {
    fn vocab_size(&self) -> usize;
    fn eos_id(&self) -> TokenId;
    /// Logits for the token following `prefix`; length `vocab_size()`.
    fn next_logits(&self, prefix: &[TokenId]) -> Vec<f64>;
    /// A fixed-dimension representation of `token`.
    fn token_repr(&self, token: TokenId) -> Vec<f64>;
}

impl<T: LanguageModel + ?Sized> LanguageModel for &T {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn eos_id(&self) -> TokenId {
        (**self).eos_id()
    }
    fn next_logits(&self, prefix: &[TokenId]) -> Vec<f64> {
        (**self).next_logits(prefix)
    }
    fn token_repr(&self, token: TokenId) -> Vec<f64> {
        (**self).token_repr(token)
    }
}

impl<T: LanguageModel + ?Sized> LanguageModel for Box<T> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn eos_id(&self) -> TokenId {
        (**self).eos_id()
    }
    fn next_logits(&self, prefix: &[TokenId]) -> Vec<f64> {
        (**self).next_logits(prefix)
    }
    fn token_repr(&self, token: TokenId) -> Vec<f64> {
        (**self).token_repr(token)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("prefix must not be empty")]
    EmptyPrefix,
    #[error("contrastive k = {k} exceeds vocabulary size {vocab}")]
    InvalidK { k: usize, vocab: usize },
    #[error("models disagree on vocabulary (sizes {a} vs {b}, eos {eos_a} vs {eos_b})")]
    VocabMismatch { a: usize, b: usize, eos_a: TokenId, eos_b: TokenId },
    #[error("invalid decode config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub max_new_tokens: usize,
    pub beam_width: usize,
    pub nucleus_p: f64,
    pub contrastive_k: usize,
    pub contrastive_alpha: f64,
    pub seed: u64,
    pub length_penalty: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            max_new_tokens: 512,
            beam_width: 4,
            nucleus_p: 0.9,
            contrastive_k: 6,
            contrastive_alpha: 0.6,
            seed: 0,
            length_penalty: 1.0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<(), DecodeError> {
        if self.beam_width == 0 {
            return Err(DecodeError::InvalidConfig("beam_width must be at least 1".into()));
        }
        if !(self.nucleus_p > 0.0 && self.nucleus_p <= 1.0) {
            return Err(DecodeError::InvalidConfig(format!("nucleus_p {} not in (0,1]", self.nucleus_p)));
        }
        if !(0.0..=1.0).contains(&self.contrastive_alpha) {
            return Err(DecodeError::InvalidConfig(format!("contrastive_alpha {} not in [0,1]", self.contrastive_alpha)));
        }
        if self.contrastive_k == 0 {
            return Err(DecodeError::InvalidConfig("contrastive_k must be at least 1".into()));
        }
        if !self.length_penalty.is_finite() {
            return Err(DecodeError::InvalidConfig("length_penalty must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    #[serde(rename = "EOS")]
    Eos,
    MaxLen,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredToken {
    pub token: TokenId,
    pub score: f64,
}

/// Candidates considered at one step. What `score` means depends on the
/// decoder: logits (greedy, ensemble), renormalised probabilities
/// (nucleus), the contrastive objective, or cumulative log-probabilities of
/// the surviving beams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub chosen: Option<TokenId>,
    pub candidates: Vec<ScoredToken>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeTrace {
    pub tokens: Vec<TokenId>,
    pub steps: Vec<StepRecord>,
    pub stop_reason: StopReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Greedy,
    Beam,
    Nucleus,
    Contrastive,
    Ensemble,
}

impl FromStr for Algorithm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "greedy" => Ok(Algorithm::Greedy),
            "beam" => Ok(Algorithm::Beam),
            "nucleus" | "top-p" => Ok(Algorithm::Nucleus),
            "contrastive" => Ok(Algorithm::Contrastive),
            "ensemble" => Ok(Algorithm::Ensemble),
            _ => Err(format!("unknown algorithm {s:?}")),
        }
    }
}

/// Index of the largest value; the lowest index among ties.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Log-probabilities, computed relative to the maximum logit.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|&x| x - lse).collect()
}

/// Probabilities, computed relative to the maximum logit.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Token ids ordered by descending value, lower id first among ties.
pub(crate) fn ranked(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

pub(crate) fn check_prefix(prefix: &[TokenId]) -> Result<(), DecodeError> {
    if prefix.is_empty() {
        Err(DecodeError::EmptyPrefix)
    } else {
        Ok(())
    }
}

/// Shared step loop for decoders that pick one token per step from the
/// current sequence.
pub(crate) fn run_stepwise(
    prefix: &[TokenId],
    eos: TokenId,
    max_new_tokens: usize,
    mut step: impl FnMut(&[TokenId]) -> StepRecord,
) -> DecodeTrace {
    let mut seq = prefix.to_vec();
    let mut tokens = Vec::new();
    let mut steps = Vec::new();
    while tokens.len() < max_new_tokens {
        let rec = step(&seq);
        let tok = rec.chosen.expect("stepwise decoders always choose a token");
        steps.push(rec);
        seq.push(tok);
        tokens.push(tok);
        if tok == eos {
            return DecodeTrace { tokens, steps, stop_reason: StopReason::Eos };
        }
    }
    DecodeTrace { tokens, steps, stop_reason: StopReason::MaxLen }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_lowest_on_tie() {
        assert_eq!(argmax(&[1.0, 1.0, 0.0]), 0);
        assert_eq!(argmax(&[0.0, 2.0, 2.0]), 1);
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1.0, 2.0, 3.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let lp = log_softmax(&[1.0, 2.0, 3.0]);
        for (a, b) in p.iter().zip(lp) {
            assert!((a.ln() - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ranking_is_stable() {
        assert_eq!(ranked(&[0.5, 0.7, 0.5, 0.1]), vec![1, 0, 2, 3]);
    }

    #[test]
    fn config_validation() {
        assert!(DecodeConfig::default().validate().is_ok());
        assert!(DecodeConfig { contrastive_alpha: 1.5, ..Default::default() }.validate().is_err());
        assert!(DecodeConfig { nucleus_p: 0.0, ..Default::default() }.validate().is_err());
        assert!(DecodeConfig { beam_width: 0, ..Default::default() }.validate().is_err());
    }
}
