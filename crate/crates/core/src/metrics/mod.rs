// SPDX-License-Identifier: Apache-2.0

//! Pairwise summarisation metrics and the leaderboard aggregation.
//!
//! Lexical metrics (BLEU-4, ROUGE-1/2/L, METEOR) are computed in-process on
//! lowercased tokens from the shared pre-tokenizer. BERTScore, AlignScore
//! and MEDCON are delegated to an external scorer process.

mod bleu;
mod external;
mod meteor;
mod report;
mod rouge;

pub use bleu::bleu4;
pub use external::{ExternalScorer, ScoreProvider, ScorerError};
pub use meteor::{meteor, meteor_tokens, MeteorParams};
pub use report::{aggregate_overall, evaluate_run, format_fixed, render_table, EvalError, MetricReport, Pair};
pub use rouge::{lcs_len, rouge_l, rouge_n, PrfScore};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::tokenizer::pre_tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "BLEU-4")]
    Bleu4,
    #[serde(rename = "ROUGE-1")]
    Rouge1,
    #[serde(rename = "ROUGE-2")]
    Rouge2,
    #[serde(rename = "ROUGE-L")]
    RougeL,
    #[serde(rename = "BERTScore")]
    BertScore,
    #[serde(rename = "Meteor")]
    Meteor,
    #[serde(rename = "AlignScore")]
    AlignScore,
    #[serde(rename = "MEDCON")]
    Medcon,
}

impl Metric {
    /// Leaderboard column order.
    pub const ALL: [Metric; 8] = [
        Metric::Bleu4,
        Metric::Rouge1,
        Metric::Rouge2,
        Metric::RougeL,
        Metric::BertScore,
        Metric::Meteor,
        Metric::AlignScore,
        Metric::Medcon,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Bleu4 => "BLEU-4",
            Metric::Rouge1 => "ROUGE-1",
            Metric::Rouge2 => "ROUGE-2",
            Metric::RougeL => "ROUGE-L",
            Metric::BertScore => "BERTScore",
            Metric::Meteor => "Meteor",
            Metric::AlignScore => "AlignScore",
            Metric::Medcon => "MEDCON",
        }
    }

    /// Whether the metric is computed by an external scorer.
    pub fn is_external(self) -> bool {
        matches!(self, Metric::BertScore | Metric::AlignScore | Metric::Medcon)
    }

    /// Score of one pair for the in-process metrics; `None` for external ones.
    pub fn lexical(self, hypothesis: &str, reference: &str) -> Option<f64> {
        Some(match self {
            Metric::Bleu4 => bleu4(hypothesis, reference),
            Metric::Rouge1 => rouge_n(hypothesis, reference, 1).f1,
            Metric::Rouge2 => rouge_n(hypothesis, reference, 2).f1,
            Metric::RougeL => rouge_l(hypothesis, reference).f1,
            Metric::Meteor => meteor(hypothesis, reference, &MeteorParams::default()),
            _ => return None,
        })
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        Ok(match key.as_str() {
            "bleu4" | "bleu" => Metric::Bleu4,
            "rouge1" => Metric::Rouge1,
            "rouge2" => Metric::Rouge2,
            "rougel" => Metric::RougeL,
            "bertscore" => Metric::BertScore,
            "meteor" => Metric::Meteor,
            "alignscore" => Metric::AlignScore,
            "medcon" => Metric::Medcon,
            _ => return Err(format!("unknown metric {s:?}")),
        })
    }
}

/// Lowercased tokens: whitespace-separated runs with each ASCII punctuation
/// character as its own token.
pub fn metric_tokens(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    pre_tokenize(&lower).into_iter().map(|r| lower[r].to_string()).collect()
}
