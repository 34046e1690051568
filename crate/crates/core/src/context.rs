// SPDX-License-Identifier: Apache-2.0

//! Input-context assembly, prompt rendering, dataset emission and the
//! fine-tuning manifest.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::budget::{truncate_text, TruncateSide};
use crate::corpus::{CorpusRecord, SkipEntry};
use crate::note::{HeaderLexicon, ParsedNote, SectionKind};
use crate::tokenizer::Tokenizer;

/// Joins section bodies inside one context.
pub const SECTION_SEPARATOR: &str = "\n\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TargetKind {
    #[serde(rename = "BHC", alias = "bhc")]
    Bhc,
    #[serde(rename = "DI", alias = "di")]
    Di,
}

impl TargetKind {
    pub const ALL: [TargetKind; 2] = [TargetKind::Bhc, TargetKind::Di];

    pub fn key(self) -> &'static str {
        match self {
            TargetKind::Bhc => "bhc",
            TargetKind::Di => "di",
        }
    }

    pub fn section(self) -> SectionKind {
        match self {
            TargetKind::Bhc => SectionKind::BriefHospitalCourse,
            TargetKind::Di => SectionKind::DischargeInstructions,
        }
    }

    pub fn instruction(self) -> &'static str {
        match self {
            TargetKind::Bhc => "Summarize the below clinical text into a section of brief hospital course.",
            TargetKind::Di => "Summarize the below clinical text into a section of discharge instruction.",
        }
    }
}

impl fmt::Display for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TargetKind::Bhc => "BHC",
            TargetKind::Di => "DI",
        })
    }
}

impl FromStr for TargetKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "bhc" => Ok(TargetKind::Bhc),
            "di" => Ok(TargetKind::Di),
            _ => Err(format!("unknown target {s:?} (expected bhc or di)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ContextVariant {
    Base,
    BasePlusRad,
    LongDi,
    RadOnly,
}

impl ContextVariant {
    pub fn key(self) -> &'static str {
        match self {
            ContextVariant::Base => "base",
            ContextVariant::BasePlusRad => "base_rad",
            ContextVariant::LongDi => "long",
            ContextVariant::RadOnly => "rad_only",
        }
    }

    /// The variant actually applicable to `target`: the long context only
    /// extends DI, so BHC falls back to its base context.
    pub fn for_target(self, target: TargetKind) -> ContextVariant {
        match (self, target) {
            (ContextVariant::LongDi, TargetKind::Bhc) => ContextVariant::Base,
            (v, _) => v,
        }
    }
}

impl FromStr for ContextVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "base" => Ok(ContextVariant::Base),
            "base-rad" | "base+rad" | "base-plus-rad" => Ok(ContextVariant::BasePlusRad),
            "long" | "long-di" => Ok(ContextVariant::LongDi),
            "rad-only" | "rad" => Ok(ContextVariant::RadOnly),
            _ => Err(format!("unknown context variant {s:?} (expected base, base-rad, long-di or rad-only)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContextPart {
    Part1,
    #[serde(rename = "BHC")]
    Bhc,
    Part2,
    RadReports,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContextError {
    #[error("context variant {variant:?} is not valid for target {target}")]
    InvalidCombination { target: TargetKind, variant: ContextVariant },
    #[error("note {note_id} has no radiology reports for a radiology-only context")]
    NoContext { note_id: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationContext {
    pub note_id: String,
    pub target: TargetKind,
    pub variant: ContextVariant,
    pub text: String,
    pub parts: Vec<ContextPart>,
}

fn section_text(note: &ParsedNote, part: ContextPart) -> &str {
    let kind = match part {
        ContextPart::Part1 => SectionKind::Part1,
        ContextPart::Bhc => SectionKind::BriefHospitalCourse,
        ContextPart::Part2 => SectionKind::Part2,
        ContextPart::RadReports => unreachable!("radiology reports are not a note section"),
    };
    note.body(kind).trim_end()
}

fn radiology_block(note: &ParsedNote) -> String {
    note.radiology_reports
        .iter()
        .map(|r| format!("Radiology Report {}:\n{}", r.order_index + 1, r.text.trim_end()))
        .collect::<Vec<_>>()
        .join(SECTION_SEPARATOR)
}

/// The gold target: the section body without its header, trimmed.
pub fn gold_target(note: &ParsedNote, target: TargetKind) -> &str {
    note.content(target.section())
}

pub fn build_context(
    note: &ParsedNote,
    target: TargetKind,
    variant: ContextVariant,
) -> Result<GenerationContext, ContextError> {
    use ContextPart::*;
    let base_parts: &[ContextPart] = match (target, variant) {
        (TargetKind::Bhc, ContextVariant::LongDi) => {
            return Err(ContextError::InvalidCombination { target, variant });
        }
        (_, ContextVariant::RadOnly) => &[],
        (TargetKind::Bhc, _) => &[Part1],
        (TargetKind::Di, ContextVariant::LongDi) => &[Part1, Bhc, Part2],
        (TargetKind::Di, _) => &[Bhc, Part2],
    };
    let mut pieces: Vec<String> = base_parts.iter().map(|&p| section_text(note, p).to_string()).collect();
    let mut parts = base_parts.to_vec();

    let with_reports = matches!(variant, ContextVariant::BasePlusRad | ContextVariant::RadOnly);
    if with_reports && !note.radiology_reports.is_empty() {
        pieces.push(radiology_block(note));
        parts.push(RadReports);
    }
    if parts.is_empty() {
        return Err(ContextError::NoContext { note_id: note.note_id.clone() });
    }
    Ok(GenerationContext { note_id: note.note_id.clone(), target, variant, text: pieces.join(SECTION_SEPARATOR), parts })
}

/// Renders the instruction prompt. Without `target_text` the prompt ends
/// right after the summary marker, ready for generation.
pub fn render_prompt(ctx: &GenerationContext, target_text: Option<&str>) -> String {
    render_prompt_text(ctx.target, &ctx.text, target_text)
}

pub fn render_prompt_text(target: TargetKind, input: &str, target_text: Option<&str>) -> String {
    format!("{}\n\n### Input:\n{}\n\n### Summary:\n{}", target.instruction(), input, target_text.unwrap_or(""))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DatasetMode {
    /// One model per target: records for a single target.
    Specialized,
    /// One model for both targets: a BHC and a DI record per note.
    Unified,
}

impl FromStr for DatasetMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "specialized" | "specialised" => Ok(DatasetMode::Specialized),
            "unified" => Ok(DatasetMode::Unified),
            _ => Err(format!("unknown dataset mode {s:?} (expected specialized or unified)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub note_id: String,
    pub target_kind: TargetKind,
    pub prompt: String,
    pub completion: String,
}

/// Token budgets applied while emitting a dataset. Contexts are truncated
/// from the left, completions from the right.
#[derive(Debug, Clone)]
pub struct DatasetBudgets<'a> {
    pub tokenizer: &'a Tokenizer,
    pub context: Option<usize>,
    pub target: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<DatasetRecord>,
    pub skipped: Vec<SkipEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DatasetError {
    #[error("specialized datasets need a target")]
    MissingTarget,
    #[error(transparent)]
    Context(#[from] ContextError),
}

fn make_record(
    note: &ParsedNote,
    target: TargetKind,
    variant: ContextVariant,
    budgets: Option<&DatasetBudgets<'_>>,
) -> Result<DatasetRecord, ContextError> {
    let ctx = build_context(note, target, variant)?;
    let mut input = ctx.text.as_str();
    let mut completion = gold_target(note, target);
    if let Some(b) = budgets {
        if let Some(n) = b.context {
            input = truncate_text(b.tokenizer, input, n, TruncateSide::Left);
        }
        if let Some(n) = b.target {
            completion = truncate_text(b.tokenizer, completion, n, TruncateSide::Right);
        }
    }
    Ok(DatasetRecord {
        note_id: note.note_id.clone(),
        target_kind: target,
        prompt: render_prompt_text(target, input, None),
        completion: completion.to_string(),
    })
}

/// Emits fine-tuning records in corpus order. Records failing any stage
/// are reported in `skipped`.
pub fn emit_dataset(
    corpus: &[CorpusRecord],
    lexicon: &HeaderLexicon,
    variant: ContextVariant,
    mode: DatasetMode,
    target: Option<TargetKind>,
    budgets: Option<&DatasetBudgets<'_>>,
) -> Result<Dataset, DatasetError> {
    use rayon::prelude::*;
    let targets: Vec<TargetKind> = match mode {
        DatasetMode::Specialized => {
            let t = target.ok_or(DatasetError::MissingTarget)?;
            if t == TargetKind::Bhc && variant == ContextVariant::LongDi {
                return Err(ContextError::InvalidCombination { target: t, variant }.into());
            }
            vec![t]
        }
        DatasetMode::Unified => TargetKind::ALL.to_vec(),
    };
    let per_note: Vec<Vec<Result<DatasetRecord, SkipEntry>>> = corpus
        .par_iter()
        .map(|rec| match rec.parse(lexicon) {
            Err(e) => vec![Err(SkipEntry::new(rec.note_id.clone(), "parse", e))],
            Ok(note) => targets
                .iter()
                .map(|&t| {
                    make_record(&note, t, variant.for_target(t), budgets)
                        .map_err(|e| SkipEntry::new(rec.note_id.clone(), &format!("context.{}", t.key()), e))
                })
                .collect(),
        })
        .collect();
    let mut out = Dataset::default();
    for r in per_note.into_iter().flatten() {
        match r {
            Ok(rec) => out.records.push(rec),
            Err(skip) => out.skipped.push(skip),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingManifest {
    pub learning_rate: f64,
    pub lora_rank: u32,
    pub lora_alpha: u32,
    pub lora_target: String,
    pub batch_size: u32,
    pub epochs: u32,
    pub warmup_ratio: f64,
    pub max_input_tokens: u32,
    pub max_output_tokens: u32,
}

impl Default for TrainingManifest {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            lora_rank: 64,
            lora_alpha: 16,
            lora_target: "all linear layers".to_string(),
            batch_size: 16,
            epochs: 5,
            warmup_ratio: 0.03,
            max_input_tokens: 2816,
            max_output_tokens: 1280,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ManifestOverrides {
    pub learning_rate: Option<f64>,
    pub lora_rank: Option<i64>,
    pub lora_alpha: Option<i64>,
    pub lora_target: Option<String>,
    pub batch_size: Option<i64>,
    pub epochs: Option<i64>,
    pub warmup_ratio: Option<f64>,
    pub max_input_tokens: Option<i64>,
    pub max_output_tokens: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid value for {field}: {message}")]
pub struct InvalidValue {
    pub field: &'static str,
    pub message: String,
}

fn positive_u32(field: &'static str, v: Option<i64>, default: u32) -> Result<u32, InvalidValue> {
    match v {
        None => Ok(default),
        Some(x) if x > 0 && x <= u32::MAX as i64 => Ok(x as u32),
        Some(x) => Err(InvalidValue { field, message: format!("{x} is not a positive integer") }),
    }
}

pub fn build_training_manifest(overrides: &ManifestOverrides) -> Result<TrainingManifest, InvalidValue> {
    let d = TrainingManifest::default();
    let learning_rate = overrides.learning_rate.unwrap_or(d.learning_rate);
    if !(learning_rate > 0.0 && learning_rate.is_finite()) {
        return Err(InvalidValue { field: "learning_rate", message: format!("{learning_rate} is not positive") });
    }
    let warmup_ratio = overrides.warmup_ratio.unwrap_or(d.warmup_ratio);
    if !(warmup_ratio > 0.0 && warmup_ratio < 1.0) {
        return Err(InvalidValue { field: "warmup_ratio", message: format!("{warmup_ratio} is not in (0,1)") });
    }
    let lora_target = overrides.lora_target.clone().unwrap_or(d.lora_target);
    if lora_target.trim().is_empty() {
        return Err(InvalidValue { field: "lora_target", message: "empty".into() });
    }
    Ok(TrainingManifest {
        learning_rate,
        lora_rank: positive_u32("lora_rank", overrides.lora_rank, d.lora_rank)?,
        lora_alpha: positive_u32("lora_alpha", overrides.lora_alpha, d.lora_alpha)?,
        lora_target,
        batch_size: positive_u32("batch_size", overrides.batch_size, d.batch_size)?,
        epochs: positive_u32("epochs", overrides.epochs, d.epochs)?,
        warmup_ratio,
        max_input_tokens: positive_u32("max_input_tokens", overrides.max_input_tokens, d.max_input_tokens)?,
        max_output_tokens: positive_u32("max_output_tokens", overrides.max_output_tokens, d.max_output_tokens)?,
    })
}
