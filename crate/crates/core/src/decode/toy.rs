// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::LanguageModel;
use crate::tokenizer::TokenId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ToyLmError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("toy model file: {0}")]
    Json(String),
}

/// Table-driven model: the logits after a prefix are the row of its last
/// token, and token representations are embedding rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyLm {
    #[serde(rename = "logits")]
    logit_table: Vec<Vec<f64>>,
    #[serde(rename = "embeddings")]
    embedding_table: Vec<Vec<f64>>,
    #[serde(rename = "eos")]
    eos_id: TokenId,
}

pub fn toy_lm_from_tables(
    logit_table: Vec<Vec<f64>>,
    embedding_table: Vec<Vec<f64>>,
    eos_id: TokenId,
) -> Result<ToyLm, ToyLmError> {
    let vocab = logit_table.len();
    if vocab == 0 {
        return Err(ToyLmError::DimensionMismatch("empty logit table".into()));
    }
    if let Some((i, row)) = logit_table.iter().enumerate().find(|(_, r)| r.len() != vocab) {
        return Err(ToyLmError::DimensionMismatch(format!("logit row {i} has {} entries, expected {vocab}", row.len())));
    }
    if embedding_table.len() != vocab {
        return Err(ToyLmError::DimensionMismatch(format!(
            "{} embedding rows for a vocabulary of {vocab}",
            embedding_table.len()
        )));
    }
    let dim = embedding_table[0].len();
    if dim == 0 || embedding_table.iter().any(|r| r.len() != dim) {
        return Err(ToyLmError::DimensionMismatch("embedding rows must share a positive dimension".into()));
    }
    if eos_id as usize >= vocab {
        return Err(ToyLmError::DimensionMismatch(format!("eos {eos_id} outside vocabulary of {vocab}")));
    }
    Ok(ToyLm { logit_table, embedding_table, eos_id })
}

impl ToyLm {
    /// Parses `{"logits": [[...]], "embeddings": [[...]], "eos": id}`.
    pub fn from_json(json: &str) -> Result<Self, ToyLmError> {
        let raw: ToyLm = serde_json::from_str(json).map_err(|e| ToyLmError::Json(e.to_string()))?;
        toy_lm_from_tables(raw.logit_table, raw.embedding_table, raw.eos_id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("toy model serialises")
    }

    pub fn logit_table(&self) -> &[Vec<f64>] {
        &self.logit_table
    }

    pub fn embedding_table(&self) -> &[Vec<f64>] {
        &self.embedding_table
    }
}

impl LanguageModel for ToyLm {
    fn vocab_size(&self) -> usize {
        self.logit_table.len()
    }

    fn eos_id(&self) -> TokenId {
        self.eos_id
    }

    fn next_logits(&self, prefix: &[TokenId]) -> Vec<f64> {
        let last = *prefix.last().expect("prefix must not be empty");
        self.logit_table[last as usize].clone()
    }

    fn token_repr(&self, token: TokenId) -> Vec<f64> {
        self.embedding_table[token as usize].clone()
    }
}
