// SPDX-License-Identifier: Apache-2.0

use super::{check_prefix, ranked, run_stepwise, softmax, DecodeConfig, DecodeError, DecodeTrace, LanguageModel, ScoredToken, StepRecord};
use crate::tokenizer::TokenId;

/// Cosine similarity; 0 when either vector has zero norm.
pub(crate) fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Contrastive search: among the top-k tokens, emit the one maximising
/// `(1 - alpha) * p(v) - alpha * max_j cos(repr(v), repr(x_j))` where `x_j`
/// ranges over the prefix and everything emitted so far.
///
/// Representations are the model's static per-token vectors.
pub fn contrastive_decode<M: LanguageModel>(lm: &M, prefix: &[TokenId], cfg: &DecodeConfig) -> Result<DecodeTrace, DecodeError> {
    check_prefix(prefix)?;
    let vocab = lm.vocab_size();
    let k = cfg.contrastive_k;
    if k > vocab {
        return Err(DecodeError::InvalidK { k, vocab });
    }
    if k == 0 {
        return Err(DecodeError::InvalidConfig("contrastive_k must be at least 1".into()));
    }
    let alpha = cfg.contrastive_alpha;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(DecodeError::InvalidConfig(format!("contrastive_alpha {alpha} not in [0,1]")));
    }
    let mut context_reprs: Vec<Vec<f64>> = prefix.iter().map(|&t| lm.token_repr(t)).collect();
    let mut seen = prefix.len();
    Ok(run_stepwise(prefix, lm.eos_id(), cfg.max_new_tokens, |seq| {
        for &t in &seq[seen..] {
            context_reprs.push(lm.token_repr(t));
        }
        seen = seq.len();
        let probs = softmax(&lm.next_logits(seq));
        let mut top: Vec<usize> = ranked(&probs).into_iter().take(k).collect();
        top.sort_unstable();
        let scored: Vec<ScoredToken> = top
            .iter()
            .map(|&v| {
                let rv = lm.token_repr(v as TokenId);
                let penalty = context_reprs.iter().map(|c| cosine(&rv, c)).fold(f64::NEG_INFINITY, f64::max);
                ScoredToken { token: v as TokenId, score: (1.0 - alpha) * probs[v] - alpha * penalty }
            })
            .collect();
        // top is sorted by id, so the first maximum is the lowest id
        let mut best = 0;
        for (i, s) in scored.iter().enumerate().skip(1) {
            if s.score > scored[best].score {
                best = i;
            }
        }
        StepRecord { chosen: Some(scored[best].token), candidates: scored }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decode::{greedy_decode, toy_lm_from_tables};

    #[test]
    fn degeneration_penalty_demotes_repeat() {
        // row 0 logits [0, 2, 1]: top-2 = {1, 2}; token 1 shares token 0's
        // direction (cos 1), token 2 is orthogonal (cos 0).
        let lm = toy_lm_from_tables(
            vec![vec![0.0, 2.0, 1.0], vec![0.0, 0.0, 0.0], vec![0.0, 0.0, 0.0]],
            vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]],
            0,
        )
        .unwrap();
        let cfg = DecodeConfig { max_new_tokens: 1, contrastive_k: 2, contrastive_alpha: 0.6, ..Default::default() };
        let t = contrastive_decode(&lm, &[0], &cfg).unwrap();
        let z = 1.0 + 2f64.exp() + 1f64.exp();
        let (p1, p2) = (2f64.exp() / z, 1f64.exp() / z);
        let s1 = 0.4 * p1 - 0.6;
        let s2 = 0.4 * p2;
        assert!(s2 > s1);
        assert_eq!(t.tokens, vec![2]);
        let rec = &t.steps[0].candidates;
        assert_eq!(rec[0].token, 1);
        assert!((rec[0].score - s1).abs() < 1e-12);
        assert!((rec[1].score - s2).abs() < 1e-12);
        assert_eq!(greedy_decode(&lm, &[0], &cfg).unwrap().tokens, vec![1]);
    }

    #[test]
    fn k_larger_than_vocab() {
        let lm = toy_lm_from_tables(vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![vec![1.0]; 2], 1).unwrap();
        let cfg = DecodeConfig { contrastive_k: 3, ..Default::default() };
        assert_eq!(contrastive_decode(&lm, &[0], &cfg).unwrap_err(), DecodeError::InvalidK { k: 3, vocab: 2 });
    }

    #[test]
    fn zero_vectors_have_zero_similarity() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 2.0]), 0.0);
        assert!((cosine(&[1.0, 1.0], &[2.0, 2.0]) - 1.0).abs() < 1e-12);
    }
}
