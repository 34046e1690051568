// SPDX-License-Identifier: Apache-2.0

use super::metric_tokens;
use super::rouge::clipped_overlap;

pub(crate) const MAX_ORDER: usize = 4;

/// Sentence-level BLEU-4 with geometric ("exp") smoothing.
///
/// Precision `p_n = c_n / t_n` over clipped n-gram matches `c_n` and
/// hypothesis n-grams `t_n`. The k-th order with `c_n = 0` (k = 1, 2, ...)
/// instead contributes `1 / (2^k * max(t_n, 1))`. The score is
/// `BP * exp(mean(ln p_n))` with `BP = exp(min(0, 1 - |ref| / |hyp|))`.
/// An empty hypothesis or one with no unigram match scores 0.
pub fn bleu4(hypothesis: &str, reference: &str) -> f64 {
    let hyp = metric_tokens(hypothesis);
    let refs = metric_tokens(reference);
    bleu4_tokens(&hyp, &refs)
}

pub(crate) fn bleu4_tokens(hyp: &[String], refs: &[String]) -> f64 {
    if hyp.is_empty() {
        return 0.0;
    }
    let mut zeros = 0i32;
    let mut log_sum = 0.0f64;
    for n in 1..=MAX_ORDER {
        let (matches, total, _) = clipped_overlap(hyp, refs, n);
        if n == 1 && matches == 0 {
            return 0.0;
        }
        let denom = total.max(1) as f64;
        let p = if matches > 0 {
            matches as f64 / denom
        } else {
            zeros += 1;
            1.0 / (2f64.powi(zeros) * denom)
        };
        log_sum += p.ln();
    }
    let bp = (1.0 - refs.len() as f64 / hyp.len() as f64).min(0.0).exp();
    bp * (log_sum / MAX_ORDER as f64).exp()
}
