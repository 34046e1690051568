// SPDX-License-Identifier: Apache-2.0

use super::greedy::argmax_step;
use super::{check_prefix, run_stepwise, DecodeConfig, DecodeError, DecodeTrace, LanguageModel};
use crate::tokenizer::TokenId;

/// Greedy decoding over the elementwise mean of two models' raw logits.
pub fn ensemble_greedy_decode<A: LanguageModel, B: LanguageModel>(
    lm_a: &A,
    lm_b: &B,
    prefix: &[TokenId],
    cfg: &DecodeConfig,
) -> Result<DecodeTrace, DecodeError> {
    if lm_a.vocab_size() != lm_b.vocab_size() || lm_a.eos_id() != lm_b.eos_id() {
        return Err(DecodeError::VocabMismatch {
            a: lm_a.vocab_size(),
            b: lm_b.vocab_size(),
            eos_a: lm_a.eos_id(),
            eos_b: lm_b.eos_id(),
        });
    }
    check_prefix(prefix)?;
    Ok(run_stepwise(prefix, lm_a.eos_id(), cfg.max_new_tokens, |seq| {
        let a = lm_a.next_logits(seq);
        let b = lm_b.next_logits(seq);
        let mean: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x + y) / 2.0).collect();
        argmax_step(&mean)
    }))
}
