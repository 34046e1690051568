// SPDX-License-Identifier: Apache-2.0

use super::{argmax, check_prefix, ranked, run_stepwise, DecodeConfig, DecodeError, DecodeTrace, LanguageModel, ScoredToken, StepRecord};
use crate::tokenizer::TokenId;

/// Candidates recorded per step by the argmax decoders.
const RECORDED: usize = 5;

pub(crate) fn argmax_step(logits: &[f64]) -> StepRecord {
    let chosen = argmax(logits) as TokenId;
    let candidates = ranked(logits)
        .into_iter()
        .take(RECORDED)
        .map(|i| ScoredToken { token: i as TokenId, score: logits[i] })
        .collect();
    StepRecord { chosen: Some(chosen), candidates }
}

/// Appends the highest-logit token until EOS or `max_new_tokens`.
pub fn greedy_decode<M: LanguageModel>(lm: &M, prefix: &[TokenId], cfg: &DecodeConfig) -> Result<DecodeTrace, DecodeError> {
    check_prefix(prefix)?;
    Ok(run_stepwise(prefix, lm.eos_id(), cfg.max_new_tokens, |seq| argmax_step(&lm.next_logits(seq))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decode::{toy_lm_from_tables, StopReason};

    fn cfg(max: usize) -> DecodeConfig {
        DecodeConfig { max_new_tokens: max, ..Default::default() }
    }

    #[test]
    fn follows_argmax_chain() {
        // a=0 -> b=1 -> eos=2
        let lm = toy_lm_from_tables(
            vec![vec![0.0, 5.0, 1.0], vec![0.0, 1.0, 5.0], vec![1.0, 0.0, 0.0]],
            vec![vec![1.0]; 3],
            2,
        )
        .unwrap();
        let t = greedy_decode(&lm, &[0], &cfg(10)).unwrap();
        assert_eq!(t.tokens, vec![1, 2]);
        assert_eq!(t.stop_reason, StopReason::Eos);
        assert_eq!(t.steps.len(), 2);
    }

    #[test]
    fn zero_budget() {
        let lm = toy_lm_from_tables(vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![vec![1.0]; 2], 1).unwrap();
        let t = greedy_decode(&lm, &[0], &cfg(0)).unwrap();
        assert!(t.tokens.is_empty());
        assert_eq!(t.stop_reason, StopReason::MaxLen);
    }

    #[test]
    fn tie_goes_to_lowest_id() {
        let lm = toy_lm_from_tables(vec![vec![1.0, 1.0, 0.0]; 3], vec![vec![1.0]; 3], 2).unwrap();
        let t = greedy_decode(&lm, &[2], &cfg(1)).unwrap();
        assert_eq!(t.tokens, vec![0]);
    }

    #[test]
    fn max_len_stop() {
        let lm = toy_lm_from_tables(vec![vec![5.0, 0.0], vec![5.0, 0.0]], vec![vec![1.0]; 2], 1).unwrap();
        let t = greedy_decode(&lm, &[0], &cfg(3)).unwrap();
        assert_eq!(t.tokens, vec![0, 0, 0]);
        assert_eq!(t.stop_reason, StopReason::MaxLen);
        assert_eq!(greedy_decode(&lm, &[], &cfg(3)).unwrap_err(), DecodeError::EmptyPrefix);
    }
}
