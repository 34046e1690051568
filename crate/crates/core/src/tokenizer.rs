// SPDX-License-Identifier: Apache-2.0

//! Built-in tokenizers: whitespace-with-punctuation and a loadable
//! byte-pair vocabulary.
//!
//! Both share the same pre-tokenizer: maximal runs of non-whitespace,
//! with every ASCII punctuation character split out as its own token.
//! Byte-pair tokenization then applies the ranked merges inside each
//! pre-token.

use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type TokenId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerKind {
    Whitespace,
    #[serde(alias = "bpe")]
    BytePair,
}

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("tokenizer file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("vocabulary ids are not dense in [0, {size}): missing id {missing}")]
    SparseIds { size: usize, missing: TokenId },
    #[error("token id {0} out of range")]
    BadId(TokenId),
    #[error("merge {0:?} is not of the form \"a b\"")]
    BadMerge(String),
}

/// Byte ranges of pre-tokens in `text`.
pub fn pre_tokenize(text: &str) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut word_start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = word_start.take() {
                out.push(s..i);
            }
        } else if c.is_ascii_punctuation() {
            if let Some(s) = word_start.take() {
                out.push(s..i);
            }
            out.push(i..i + 1);
        } else if word_start.is_none() {
            word_start = Some(i);
        }
    }
    if let Some(s) = word_start {
        out.push(s..text.len());
    }
    out
}

#[derive(Debug, Deserialize)]
struct TokenizerFile {
    #[serde(default)]
    kind: Option<TokenizerKind>,
    vocab: HashMap<String, TokenId>,
    #[serde(default)]
    merges: Vec<String>,
    eos: TokenId,
    #[serde(default)]
    unk: Option<TokenId>,
}

#[derive(Debug, Clone)]
pub struct Tokenizer {
    kind: TokenizerKind,
    vocab: HashMap<String, TokenId>,
    id_to_token: Vec<String>,
    merge_ranks: HashMap<(String, String), usize>,
    unk_id: TokenId,
    eos_id: TokenId,
}

pub const UNK_TOKEN: &str = "<unk>";
pub const EOS_TOKEN: &str = "</s>";

impl Tokenizer {
    /// Whitespace tokenizer with only `<unk>` (0) and `</s>` (1) in its
    /// vocabulary. Enough for counting and span-preserving truncation.
    pub fn whitespace() -> Self {
        Self::whitespace_with_vocab(std::iter::empty::<&str>())
    }

    /// Whitespace tokenizer whose vocabulary is `<unk>`, `</s>` and then
    /// `words` in first-seen order.
    pub fn whitespace_with_vocab<S: AsRef<str>>(words: impl IntoIterator<Item = S>) -> Self {
        let mut id_to_token = vec![UNK_TOKEN.to_string(), EOS_TOKEN.to_string()];
        let mut vocab: HashMap<String, TokenId> =
            id_to_token.iter().enumerate().map(|(i, t)| (t.clone(), i as TokenId)).collect();
        for w in words {
            let w = w.as_ref();
            if !vocab.contains_key(w) {
                vocab.insert(w.to_string(), id_to_token.len() as TokenId);
                id_to_token.push(w.to_string());
            }
        }
        Self { kind: TokenizerKind::Whitespace, vocab, id_to_token, merge_ranks: HashMap::new(), unk_id: 0, eos_id: 1 }
    }

    /// Loads `{"vocab": {token: id}, "merges": ["a b", ...], "eos": id}`.
    /// An optional `"kind"` (`"whitespace"` / `"bytepair"`, default byte-pair)
    /// and `"unk"` id are accepted.
    pub fn from_json(json: &str) -> Result<Self, TokenizerError> {
        let file: TokenizerFile = serde_json::from_str(json)?;
        let size = file.vocab.values().map(|&id| id as usize + 1).max().unwrap_or(0);
        let mut id_to_token = vec![None; size];
        for (tok, &id) in &file.vocab {
            id_to_token[id as usize] = Some(tok.clone());
        }
        let id_to_token = id_to_token
            .into_iter()
            .enumerate()
            .map(|(i, t)| t.ok_or(TokenizerError::SparseIds { size, missing: i as TokenId }))
            .collect::<Result<Vec<_>, _>>()?;
        if file.eos as usize >= size {
            return Err(TokenizerError::BadId(file.eos));
        }
        let unk_id = match file.unk {
            Some(id) if id as usize >= size => return Err(TokenizerError::BadId(id)),
            Some(id) => id,
            None => file.vocab.get(UNK_TOKEN).copied().unwrap_or(file.eos),
        };
        let mut merge_ranks = HashMap::new();
        for (rank, m) in file.merges.iter().enumerate() {
            let (a, b) = m.split_once(' ').ok_or_else(|| TokenizerError::BadMerge(m.clone()))?;
            merge_ranks.entry((a.to_string(), b.to_string())).or_insert(rank);
        }
        Ok(Self {
            kind: file.kind.unwrap_or(TokenizerKind::BytePair),
            vocab: file.vocab,
            id_to_token,
            merge_ranks,
            unk_id,
            eos_id: file.eos,
        })
    }

    pub fn kind(&self) -> TokenizerKind {
        self.kind
    }

    pub fn vocab_size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn eos_id(&self) -> TokenId {
        self.eos_id
    }

    pub fn unk_id(&self) -> TokenId {
        self.unk_id
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    fn id_of(&self, piece: &str) -> TokenId {
        self.vocab.get(piece).copied().unwrap_or(self.unk_id)
    }

    /// Greedy lowest-rank-first merging of the characters of one pre-token.
    fn bpe_word(&self, word: &str, base: usize, out: &mut Vec<(TokenId, Range<usize>)>) {
        let mut symbols: Vec<Range<usize>> = word.char_indices().map(|(i, c)| i..i + c.len_utf8()).collect();
        loop {
            let best = symbols
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| {
                    let key = (word[w[0].clone()].to_string(), word[w[1].clone()].to_string());
                    self.merge_ranks.get(&key).map(|&r| (r, i))
                })
                .min();
            let Some((rank, _)) = best else { break };
            // merge every occurrence of the winning pair, left to right
            let mut merged = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() {
                    let key = (word[symbols[i].clone()].to_string(), word[symbols[i + 1].clone()].to_string());
                    if self.merge_ranks.get(&key) == Some(&rank) {
                        merged.push(symbols[i].start..symbols[i + 1].end);
                        i += 2;
                        continue;
                    }
                }
                merged.push(symbols[i].clone());
                i += 1;
            }
            symbols = merged;
        }
        for s in symbols {
            out.push((self.id_of(&word[s.clone()]), base + s.start..base + s.end));
        }
    }

    /// Token ids with the byte range each token covers in `text`.
    pub fn encode_with_spans(&self, text: &str) -> Vec<(TokenId, Range<usize>)> {
        let mut out = Vec::new();
        for r in pre_tokenize(text) {
            match self.kind {
                TokenizerKind::Whitespace => out.push((self.id_of(&text[r.clone()]), r)),
                TokenizerKind::BytePair => self.bpe_word(&text[r.clone()], r.start, &mut out),
            }
        }
        out
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        self.encode_with_spans(text).into_iter().map(|(id, _)| id).collect()
    }

    /// Space-joined token strings, skipping EOS. Unknown ids render as `<unk>`.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .filter(|&&id| id != self.eos_id)
            .map(|&id| self.token(id).unwrap_or(UNK_TOKEN))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Number of tokens `tokenizer` produces for `text`.
pub fn count_tokens(tokenizer: &Tokenizer, text: &str) -> usize {
    match tokenizer.kind {
        TokenizerKind::Whitespace => pre_tokenize(text).len(),
        TokenizerKind::BytePair => tokenizer.encode_with_spans(text).len(),
    }
}
