// SPDX-License-Identifier: Apache-2.0

//! Line-delimited JSON corpus ingestion.

use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::note::{attach_radiology, parse_note, HeaderLexicon, NoteError, ParsedNote, RadiologyReport};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub report_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub note_id: String,
    pub text: String,
    #[serde(default)]
    pub radiology_reports: Vec<ReportRecord>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One corpus record that could not be processed by some stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipEntry {
    pub note_id: String,
    pub stage: String,
    pub reason: String,
}

impl SkipEntry {
    pub fn new(note_id: impl Into<String>, stage: &str, reason: impl ToString) -> Self {
        Self { note_id: note_id.into(), stage: stage.to_string(), reason: reason.to_string() }
    }
}

/// Reads every non-blank line as a [`CorpusRecord`].
pub fn read_corpus<R: BufRead>(reader: R) -> Result<Vec<CorpusRecord>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|source| CorpusError::Json { line: i + 1, source })?;
        out.push(rec);
    }
    Ok(out)
}

impl CorpusRecord {
    /// Parses the note text and attaches its radiology reports.
    pub fn parse(&self, lexicon: &HeaderLexicon) -> Result<ParsedNote, NoteError> {
        let note = parse_note(&self.note_id, &self.text, lexicon)?;
        let reports = self
            .radiology_reports
            .iter()
            .enumerate()
            .map(|(i, r)| RadiologyReport::new(r.report_id.clone(), r.text.clone(), i))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(attach_radiology(&note, reports))
    }
}

/// Parses every record, splitting the corpus into parsed notes and a skip-list.
pub fn parse_corpus(records: &[CorpusRecord], lexicon: &HeaderLexicon) -> (Vec<ParsedNote>, Vec<SkipEntry>) {
    use rayon::prelude::*;
    let results: Vec<_> = records.par_iter().map(|r| r.parse(lexicon)).collect();
    let mut notes = Vec::new();
    let mut skips = Vec::new();
    for (rec, res) in records.iter().zip(results) {
        match res {
            Ok(n) => notes.push(n),
            Err(e) => skips.push(SkipEntry::new(rec.note_id.clone(), "parse", e)),
        }
    }
    (notes, skips)
}
