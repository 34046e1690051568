// SPDX-License-Identifier: Apache-2.0

//! Percentile token budgets and truncation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::{build_context, gold_target, ContextVariant, TargetKind};
use crate::corpus::SkipEntry;
use crate::note::ParsedNote;
use crate::tokenizer::{count_tokens, TokenId, Tokenizer};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BudgetError {
    #[error("no token counts for {field}")]
    EmptyCounts { field: String },
    #[error("invalid budget policy: {0}")]
    InvalidPolicy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenBudgetPolicy {
    pub percentile: f64,
    pub multiple: usize,
}

impl Default for TokenBudgetPolicy {
    fn default() -> Self {
        Self { percentile: 0.85, multiple: 256 }
    }
}

impl TokenBudgetPolicy {
    pub fn new(percentile: f64, multiple: usize) -> Result<Self, BudgetError> {
        if !(percentile > 0.0 && percentile <= 1.0) {
            return Err(BudgetError::InvalidPolicy(format!("percentile {percentile} not in (0,1]")));
        }
        if multiple == 0 {
            return Err(BudgetError::InvalidPolicy("multiple must be positive".into()));
        }
        Ok(Self { percentile, multiple })
    }
}

/// Nearest-rank percentile: the element at 1-based index `ceil(p * N)` of the
/// ascending-sorted sample.
pub fn nearest_rank(counts: &[usize], percentile: f64) -> Option<usize> {
    if counts.is_empty() {
        return None;
    }
    let mut sorted = counts.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let rank = ((percentile * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    Some(sorted[rank - 1])
}

/// Rounds up to the next multiple, mapping 0 to `multiple` itself.
pub fn round_up_to_multiple(value: usize, multiple: usize) -> usize {
    if value == 0 {
        multiple
    } else {
        value.div_ceil(multiple) * multiple
    }
}

pub fn percentile_budget(counts: &[usize], policy: &TokenBudgetPolicy) -> Result<usize, BudgetError> {
    let v = nearest_rank(counts, policy.percentile).ok_or_else(|| BudgetError::EmptyCounts { field: "counts".into() })?;
    Ok(round_up_to_multiple(v, policy.multiple))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TruncateSide {
    /// Drop the prefix, keep the tail.
    Left,
    /// Drop the suffix, keep the head.
    Right,
}

pub fn truncate_to_budget(ids: &[TokenId], budget: usize, side: TruncateSide) -> Vec<TokenId> {
    if ids.len() <= budget {
        return ids.to_vec();
    }
    match side {
        TruncateSide::Left => ids[ids.len() - budget..].to_vec(),
        TruncateSide::Right => ids[..budget].to_vec(),
    }
}

/// Truncates `text` to at most `budget` tokens and returns the slice of the
/// source text spanned by the kept tokens.
pub fn truncate_text<'a>(tokenizer: &Tokenizer, text: &'a str, budget: usize, side: TruncateSide) -> &'a str {
    let spans = tokenizer.encode_with_spans(text);
    if spans.len() <= budget {
        return text;
    }
    if budget == 0 {
        return "";
    }
    let kept = match side {
        TruncateSide::Left => &spans[spans.len() - budget..],
        TruncateSide::Right => &spans[..budget],
    };
    let start = kept.first().map_or(0, |s| s.1.start);
    let end = kept.last().map_or(0, |s| s.1.end);
    match side {
        // keep trailing whitespace/punctuation context on the kept side
        TruncateSide::Left => &text[start..],
        TruncateSide::Right => &text[..end],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldBudget {
    pub counts: Vec<usize>,
    pub percentile_value: Option<usize>,
    pub budget: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenBudgetReport {
    pub policy: TokenBudgetPolicy,
    pub fields: BTreeMap<String, FieldBudget>,
    pub skipped: Vec<SkipEntry>,
}

impl TokenBudgetReport {
    pub fn budget(&self, field: &str) -> Result<usize, BudgetError> {
        self.fields
            .get(field)
            .and_then(|f| f.budget)
            .ok_or_else(|| BudgetError::EmptyCounts { field: field.to_string() })
    }
}

/// Name of the budget field for a context.
pub fn context_field(target: TargetKind, variant: ContextVariant) -> String {
    match variant {
        ContextVariant::RadOnly => "context.rad_only".to_string(),
        _ => format!("context.{}.{}", target.key(), variant.key()),
    }
}

pub fn target_field(target: TargetKind) -> String {
    format!("target.{}", target.key())
}

const CONTEXT_FIELDS: [(TargetKind, ContextVariant); 6] = [
    (TargetKind::Bhc, ContextVariant::Base),
    (TargetKind::Di, ContextVariant::Base),
    (TargetKind::Di, ContextVariant::LongDi),
    (TargetKind::Bhc, ContextVariant::BasePlusRad),
    (TargetKind::Di, ContextVariant::BasePlusRad),
    (TargetKind::Bhc, ContextVariant::RadOnly),
];

/// Token-count distributions and budgets for every context variant and target.
///
/// Notes that fail parsing are recorded in `skipped` by the caller; contexts
/// that cannot be built for a note (e.g. radiology-only without reports) are
/// left out of that field's distribution.
pub fn budget_report(notes: &[ParsedNote], tokenizer: &Tokenizer, policy: &TokenBudgetPolicy) -> TokenBudgetReport {
    use rayon::prelude::*;
    let per_note: Vec<Vec<(String, usize)>> = notes
        .par_iter()
        .map(|note| {
            let mut row = Vec::new();
            for (target, variant) in CONTEXT_FIELDS {
                if let Ok(ctx) = build_context(note, target, variant) {
                    row.push((context_field(target, variant), count_tokens(tokenizer, &ctx.text)));
                }
            }
            for target in [TargetKind::Bhc, TargetKind::Di] {
                row.push((target_field(target), count_tokens(tokenizer, gold_target(note, target))));
            }
            row
        })
        .collect();

    let mut fields: BTreeMap<String, Vec<usize>> = CONTEXT_FIELDS
        .iter()
        .map(|&(t, v)| context_field(t, v))
        .chain([TargetKind::Bhc, TargetKind::Di].map(target_field))
        .map(|k| (k, Vec::new()))
        .collect();
    for row in per_note {
        for (k, c) in row {
            fields.entry(k).or_default().push(c);
        }
    }

    let fields = fields
        .into_iter()
        .map(|(name, counts)| {
            let percentile_value = nearest_rank(&counts, policy.percentile);
            let budget = percentile_value.map(|v| round_up_to_multiple(v, policy.multiple));
            let error = budget.is_none().then(|| BudgetError::EmptyCounts { field: name.clone() }.to_string());
            (name, FieldBudget { counts, percentile_value, budget, error })
        })
        .collect();
    TokenBudgetReport { policy: *policy, fields, skipped: Vec::new() }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn policy() -> TokenBudgetPolicy {
        TokenBudgetPolicy::default()
    }

    #[test]
    fn nearest_rank_then_round() {
        let counts: Vec<usize> = (1..=100).collect();
        assert_eq!(nearest_rank(&counts, 0.85), Some(85));
        assert_eq!(percentile_budget(&counts, &policy()).unwrap(), 256);
        assert_eq!(percentile_budget(&[300; 10], &policy()).unwrap(), 512);
        assert_eq!(percentile_budget(&[256], &policy()).unwrap(), 256);
        assert_eq!(percentile_budget(&[0, 0], &policy()).unwrap(), 256);
        assert_eq!(percentile_budget(&[], &policy()), Err(BudgetError::EmptyCounts { field: "counts".into() }));
    }

    #[test]
    fn percentile_one_is_max() {
        assert_eq!(nearest_rank(&[5, 1, 9, 3], 1.0), Some(9));
        assert_eq!(nearest_rank(&[5, 1, 9, 3], 0.01), Some(1));
    }

    #[test]
    fn policy_validation() {
        assert!(TokenBudgetPolicy::new(0.0, 256).is_err());
        assert!(TokenBudgetPolicy::new(1.5, 256).is_err());
        assert!(TokenBudgetPolicy::new(0.5, 0).is_err());
        assert!(TokenBudgetPolicy::new(1.0, 1).is_ok());
    }

    #[test]
    fn truncation() {
        assert_eq!(truncate_to_budget(&[1, 2, 3], 5, TruncateSide::Right), vec![1, 2, 3]);
        assert_eq!(truncate_to_budget(&[1, 2, 3, 4], 2, TruncateSide::Left), vec![3, 4]);
        assert_eq!(truncate_to_budget(&[1, 2, 3, 4], 2, TruncateSide::Right), vec![1, 2]);
    }

    #[test]
    fn text_truncation_keeps_source_bytes() {
        let t = Tokenizer::whitespace();
        assert_eq!(truncate_text(&t, "a b, c d", 2, TruncateSide::Right), "a b");
        assert_eq!(truncate_text(&t, "a b, c d", 2, TruncateSide::Left), "c d");
        assert_eq!(truncate_text(&t, "a b", 9, TruncateSide::Left), "a b");
    }
}
