// SPDX-License-Identifier: Apache-2.0

//! Discharge-note segmentation.
//!
//! A note is split into a byte-exact partition of spans: everything before
//! the Brief Hospital Course header (`Part1`), the BHC section, whatever sits
//! between BHC and the Discharge Instructions header (`Part2`), the DI
//! section, and any trailing text (`Other`). Headers are matched at the start
//! of a line (leading whitespace allowed), ASCII case-insensitively. A section
//! body always includes its own header line.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SectionKind {
    Part1,
    BriefHospitalCourse,
    Part2,
    DischargeInstructions,
    Other,
}

impl fmt::Display for SectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SectionKind::Part1 => "Part1",
            SectionKind::BriefHospitalCourse => "BriefHospitalCourse",
            SectionKind::Part2 => "Part2",
            SectionKind::DischargeInstructions => "DischargeInstructions",
            SectionKind::Other => "Other",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NoteError {
    #[error("note is empty")]
    EmptyNote,
    #[error("missing section {kind}")]
    MissingSection { kind: SectionKind },
    #[error("section {kind} appears more than once")]
    DuplicateSection { kind: SectionKind },
    #[error("DischargeInstructions header precedes BriefHospitalCourse header")]
    SectionOrder,
    #[error("radiology report {report_id} has empty text")]
    EmptyReport { report_id: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("lexicon line {line}: {message}")]
pub struct LexiconError {
    pub line: usize,
    pub message: String,
}

/// Header strings recognised by [`parse_note`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeaderLexicon {
    pub bhc: Vec<String>,
    pub di: Vec<String>,
    /// Headers that close the BHC or DI section when they follow it.
    pub stop: Vec<String>,
}

impl Default for HeaderLexicon {
    fn default() -> Self {
        let owned = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        Self {
            bhc: owned(&["Brief Hospital Course:"]),
            di: owned(&["Discharge Instructions:"]),
            stop: owned(&[
                "Medications on Admission:",
                "Discharge Medications:",
                "Medications:",
                "Discharge Disposition:",
                "Discharge Diagnosis:",
                "Discharge Condition:",
                "Followup Instructions:",
            ]),
        }
    }
}

impl FromStr for HeaderLexicon {
    type Err = LexiconError;

    /// One header per line, prefixed by its kind: `BHC:`, `DI:` or `STOP:`.
    /// Blank lines and lines starting with `#` are ignored.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut lex = HeaderLexicon { bhc: vec![], di: vec![], stop: vec![] };
        for (i, raw) in s.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: &str| LexiconError { line: i + 1, message: message.to_string() };
            let (kind, header) = line.split_once(':').ok_or_else(|| err("expected KIND: header"))?;
            let header = header.trim();
            if header.is_empty() {
                return Err(err("empty header"));
            }
            match kind.trim().to_ascii_uppercase().as_str() {
                "BHC" => lex.bhc.push(header.to_string()),
                "DI" => lex.di.push(header.to_string()),
                "STOP" => lex.stop.push(header.to_string()),
                _ => return Err(err("unknown kind, expected BHC, DI or STOP")),
            }
        }
        if lex.bhc.is_empty() || lex.di.is_empty() {
            return Err(LexiconError { line: 0, message: "lexicon needs at least one BHC and one DI header".into() });
        }
        Ok(lex)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionSpan {
    pub kind: SectionKind,
    /// The matched header line without its line terminator; empty for
    /// `Part1`, `Part2` and `Other`.
    pub header_text: String,
    pub start: usize,
    pub end: usize,
    /// Offset just past the matched header string (equals `start` for
    /// header-less spans).
    pub content_start: usize,
}

impl SectionSpan {
    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RadiologyReport {
    pub report_id: String,
    pub text: String,
    pub order_index: usize,
}

impl RadiologyReport {
    pub fn new(report_id: impl Into<String>, text: impl Into<String>, order_index: usize) -> Result<Self, NoteError> {
        let report_id = report_id.into();
        let text = text.into();
        if text.trim().is_empty() {
            return Err(NoteError::EmptyReport { report_id });
        }
        Ok(Self { report_id, text, order_index })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedNote {
    pub note_id: String,
    pub raw_text: String,
    pub sections: Vec<SectionSpan>,
    pub radiology_reports: Vec<RadiologyReport>,
}

impl ParsedNote {
    pub fn span(&self, kind: SectionKind) -> Option<&SectionSpan> {
        self.sections.iter().find(|s| s.kind == kind)
    }

    /// Body of the section including its header line, or `""` when the
    /// section is absent (only `Part1`, `Part2` and `Other` may be absent).
    pub fn body(&self, kind: SectionKind) -> &str {
        self.span(kind).map_or("", |s| &self.raw_text[s.range()])
    }

    /// Body with the matched header removed and surrounding whitespace trimmed.
    pub fn content(&self, kind: SectionKind) -> &str {
        self.span(kind).map_or("", |s| self.raw_text[s.content_start..s.end].trim())
    }
}

struct Line<'a> {
    start: usize,
    text: &'a str,
}

fn lines_with_offsets(text: &str) -> Vec<Line<'_>> {
    let mut out = Vec::new();
    let mut start = 0;
    for piece in text.split_inclusive('\n') {
        out.push(Line { start, text: piece });
        start += piece.len();
    }
    out
}

/// Length of the matched header prefix (including leading whitespace), if
/// the line starts with one of `headers`.
fn match_header(line: &str, headers: &[String]) -> Option<usize> {
    let body = line.trim_start();
    let indent = line.len() - body.len();
    headers
        .iter()
        .map(|h| h.as_bytes())
        .filter(|h| body.len() >= h.len() && body.as_bytes()[..h.len()].eq_ignore_ascii_case(h))
        .map(|h| indent + h.len())
        .max()
}

fn matches_header(line: &str, headers: &[String]) -> bool {
    match_header(line, headers).is_some()
}

fn header_line(line: &str) -> String {
    line.trim_end_matches(['\n', '\r']).to_string()
}

/// Segments `raw_text` into the Part1 / BHC / Part2 / DI structure.
pub fn parse_note(note_id: &str, raw_text: &str, lexicon: &HeaderLexicon) -> Result<ParsedNote, NoteError> {
    if raw_text.trim().is_empty() {
        return Err(NoteError::EmptyNote);
    }
    let lines = lines_with_offsets(raw_text);

    let find_unique = |headers: &[String], kind: SectionKind| -> Result<usize, NoteError> {
        let mut hits = lines.iter().enumerate().filter(|(_, l)| matches_header(l.text, headers));
        let first = hits.next().map(|(i, _)| i).ok_or(NoteError::MissingSection { kind })?;
        if hits.next().is_some() {
            return Err(NoteError::DuplicateSection { kind });
        }
        Ok(first)
    };
    let bhc_line = find_unique(&lexicon.bhc, SectionKind::BriefHospitalCourse)?;
    let di_line = find_unique(&lexicon.di, SectionKind::DischargeInstructions)?;
    if di_line < bhc_line {
        return Err(NoteError::SectionOrder);
    }

    let stop_between = (bhc_line + 1..di_line).find(|&i| matches_header(lines[i].text, &lexicon.stop));
    let stop_after = (di_line + 1..lines.len()).find(|&i| matches_header(lines[i].text, &lexicon.stop));

    let offset = |i: usize| lines.get(i).map_or(raw_text.len(), |l| l.start);
    let bhc_start = offset(bhc_line);
    let bhc_end = offset(stop_between.unwrap_or(di_line));
    let di_start = offset(di_line);
    let di_end = stop_after.map_or(raw_text.len(), offset);

    let mut sections = Vec::with_capacity(5);
    let mut push = |kind, header_text: String, start: usize, end: usize, header_len: usize| {
        if start < end {
            sections.push(SectionSpan { kind, header_text, start, end, content_start: start + header_len });
        }
    };
    let bhc_header = match_header(lines[bhc_line].text, &lexicon.bhc).unwrap_or(0);
    let di_header = match_header(lines[di_line].text, &lexicon.di).unwrap_or(0);
    push(SectionKind::Part1, String::new(), 0, bhc_start, 0);
    push(SectionKind::BriefHospitalCourse, header_line(lines[bhc_line].text), bhc_start, bhc_end, bhc_header);
    push(SectionKind::Part2, String::new(), bhc_end, di_start, 0);
    push(SectionKind::DischargeInstructions, header_line(lines[di_line].text), di_start, di_end, di_header);
    push(SectionKind::Other, String::new(), di_end, raw_text.len(), 0);

    Ok(ParsedNote {
        note_id: note_id.to_string(),
        raw_text: raw_text.to_string(),
        sections,
        radiology_reports: Vec::new(),
    })
}

/// Concatenates the span bodies back into the original text.
pub fn reconstruct(note: &ParsedNote) -> String {
    note.sections.iter().map(|s| &note.raw_text[s.range()]).collect()
}

/// Returns a copy of `note` with its radiology reports replaced by `reports`.
pub fn attach_radiology(note: &ParsedNote, reports: Vec<RadiologyReport>) -> ParsedNote {
    let mut out = note.clone();
    out.radiology_reports = reports
        .into_iter()
        .enumerate()
        .map(|(i, mut r)| {
            r.order_index = i;
            r
        })
        .collect();
    out
}
