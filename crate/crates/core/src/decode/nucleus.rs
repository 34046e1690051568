// SPDX-License-Identifier: Apache-2.0

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_prefix, ranked, run_stepwise, softmax, DecodeConfig, DecodeError, DecodeTrace, LanguageModel, ScoredToken, StepRecord};
use crate::tokenizer::TokenId;

/// The smallest most-probable set whose mass reaches `p`, as
/// `(token, renormalised probability)` in descending order.
pub(crate) fn nucleus(probs: &[f64], p: f64) -> Vec<(usize, f64)> {
    let order = ranked(probs);
    let mut mass = 0.0;
    let mut cut = order.len();
    for (i, &t) in order.iter().enumerate() {
        mass += probs[t];
        if mass >= p {
            cut = i + 1;
            break;
        }
    }
    let kept = &order[..cut];
    let total: f64 = kept.iter().map(|&t| probs[t]).sum();
    kept.iter().map(|&t| (t, probs[t] / total)).collect()
}

fn sample(set: &[(usize, f64)], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(t, q) in set {
        acc += q;
        if u < acc {
            return t;
        }
    }
    // u landed in the rounding gap above the final cumulative sum
    set.iter().rev().find(|&&(_, q)| q > 0.0).map_or(set[0].0, |&(t, _)| t)
}

/// Top-p sampling with a ChaCha8 generator seeded from `cfg.seed`.
pub fn nucleus_decode<M: LanguageModel>(lm: &M, prefix: &[TokenId], cfg: &DecodeConfig) -> Result<DecodeTrace, DecodeError> {
    check_prefix(prefix)?;
    if !(cfg.nucleus_p > 0.0 && cfg.nucleus_p <= 1.0) {
        return Err(DecodeError::InvalidConfig(format!("nucleus_p {} not in (0,1]", cfg.nucleus_p)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok(run_stepwise(prefix, lm.eos_id(), cfg.max_new_tokens, |seq| {
        let set = nucleus(&softmax(&lm.next_logits(seq)), cfg.nucleus_p);
        let chosen = sample(&set, &mut rng) as TokenId;
        StepRecord {
            chosen: Some(chosen),
            candidates: set.iter().map(|&(t, q)| ScoredToken { token: t as TokenId, score: q }).collect(),
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decode::{greedy_decode, toy_lm_from_tables};

    #[test]
    fn nucleus_set() {
        let set = nucleus(&[0.1, 0.7, 0.2], 0.8);
        assert_eq!(set.iter().map(|s| s.0).collect::<Vec<_>>(), vec![1, 2]);
        assert!((set[0].1 - 7.0 / 9.0).abs() < 1e-12);
        assert_eq!(nucleus(&[0.1, 0.7, 0.2], 0.5).len(), 1);
        assert_eq!(nucleus(&[0.25; 4], 1.0).len(), 4);
    }

    #[test]
    fn degenerate_nucleus_is_greedy() {
        let lm = toy_lm_from_tables(
            vec![vec![0.0, 3.0, 1.0], vec![2.0, 0.0, 4.0], vec![4.0, 0.0, 0.0]],
            vec![vec![1.0]; 3],
            2,
        )
        .unwrap();
        let cfg = DecodeConfig { max_new_tokens: 6, nucleus_p: 0.05, seed: 9, ..Default::default() };
        assert_eq!(nucleus_decode(&lm, &[0], &cfg).unwrap().tokens, greedy_decode(&lm, &[0], &cfg).unwrap().tokens);
    }

    #[test]
    fn seeded_runs_repeat() {
        let lm = toy_lm_from_tables(vec![vec![0.0, 0.1, 0.2, -0.1]; 4], vec![vec![1.0]; 4], 3).unwrap();
        let cfg = DecodeConfig { max_new_tokens: 20, nucleus_p: 0.95, seed: 1234, ..Default::default() };
        let a = nucleus_decode(&lm, &[0], &cfg).unwrap();
        let b = nucleus_decode(&lm, &[0], &cfg).unwrap();
        assert_eq!(a, b);
    }
}
