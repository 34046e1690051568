// SPDX-License-Identifier: Apache-2.0

use std::cmp::Ordering;

use super::{check_prefix, greedy_decode, log_softmax, DecodeConfig, DecodeError, DecodeTrace, LanguageModel, ScoredToken, StepRecord, StopReason};
use crate::tokenizer::TokenId;

#[derive(Debug, Clone)]
struct Hypothesis {
    tokens: Vec<TokenId>,
    score: f64,
}

fn normalized(h: &Hypothesis, length_penalty: f64) -> f64 {
    h.score / (h.tokens.len() as f64).powf(length_penalty)
}

/// Higher value first, then lexicographically smaller sequence.
fn by_value_then_tokens(a_value: f64, a: &[TokenId], b_value: f64, b: &[TokenId]) -> Ordering {
    b_value.total_cmp(&a_value).then_with(|| a.cmp(b))
}

/// Beam search over summed token log-probabilities.
///
/// Every EOS extension of a live beam is set aside as finished; the `n`
/// best non-EOS extensions stay live. After `max_new_tokens` steps the
/// output is the finished-or-full-length hypothesis maximising
/// `score / len^length_penalty`. A beam of width one is greedy search.
pub fn beam_decode<M: LanguageModel>(lm: &M, prefix: &[TokenId], cfg: &DecodeConfig) -> Result<DecodeTrace, DecodeError> {
    check_prefix(prefix)?;
    if cfg.beam_width == 0 {
        return Err(DecodeError::InvalidConfig("beam_width must be at least 1".into()));
    }
    if cfg.beam_width == 1 {
        return greedy_decode(lm, prefix, cfg);
    }
    if cfg.max_new_tokens == 0 {
        return Ok(DecodeTrace { tokens: vec![], steps: vec![], stop_reason: StopReason::MaxLen });
    }
    let eos = lm.eos_id();
    let mut live = vec![Hypothesis { tokens: vec![], score: 0.0 }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    let mut steps = Vec::new();
    let mut seq = Vec::with_capacity(prefix.len() + cfg.max_new_tokens);

    for _ in 0..cfg.max_new_tokens {
        let mut candidates = Vec::with_capacity(live.len() * lm.vocab_size());
        for h in &live {
            seq.clear();
            seq.extend_from_slice(prefix);
            seq.extend_from_slice(&h.tokens);
            let logp = log_softmax(&lm.next_logits(&seq));
            for (v, lp) in logp.into_iter().enumerate() {
                let mut tokens = h.tokens.clone();
                tokens.push(v as TokenId);
                let ext = Hypothesis { tokens, score: h.score + lp };
                if v as TokenId == eos {
                    finished.push(ext);
                } else {
                    candidates.push(ext);
                }
            }
        }
        candidates.sort_by(|a, b| by_value_then_tokens(a.score, &a.tokens, b.score, &b.tokens));
        candidates.truncate(cfg.beam_width);
        live = candidates;
        steps.push(StepRecord {
            chosen: None,
            candidates: live
                .iter()
                .map(|h| ScoredToken { token: *h.tokens.last().expect("non-empty"), score: h.score })
                .collect(),
        });
        if live.is_empty() {
            break;
        }
    }

    let best = finished
        .iter()
        .chain(live.iter().filter(|h| h.tokens.len() == cfg.max_new_tokens))
        .min_by(|a, b| {
            by_value_then_tokens(
                normalized(a, cfg.length_penalty),
                &a.tokens,
                normalized(b, cfg.length_penalty),
                &b.tokens,
            )
        })
        .expect("at least one complete hypothesis");
    let stop_reason = if best.tokens.last() == Some(&eos) { StopReason::Eos } else { StopReason::MaxLen };
    Ok(DecodeTrace { tokens: best.tokens.clone(), steps, stop_reason })
}
