// SPDX-License-Identifier: Apache-2.0

//! C ABI over `dischargekit`.
//!
//! Every fallible function returns a [`DkStatus`]; on failure a message is
//! available from [`dk_last_error`] on the same thread. Objects are opaque
//! handles created by `dk_*_new`/`dk_*_parse`/`dk_*_load` style functions
//! and released with the matching `dk_*_free`. Strings returned to the
//! caller are released with [`dk_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use dischargekit::budget::{percentile_budget, TokenBudgetPolicy};
use dischargekit::decode::{
    beam_decode, contrastive_decode, ensemble_greedy_decode, greedy_decode, nucleus_decode, DecodeConfig, DecodeTrace,
    StopReason, ToyLm,
};
use dischargekit::merge::{
    load_tensor_map, lora_merge, save_tensor_map, ties_merge, LoraAdapter, NamedTensorMap, Tensor, TiesConfig,
};
use dischargekit::metrics::{aggregate_overall, Metric};
use dischargekit::note::{parse_note, reconstruct, HeaderLexicon, ParsedNote, SectionKind};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    ParseError = 4,
    DecodeError = 5,
    MergeError = 6,
    IoError = 7,
    OutOfRange = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DkSectionKind {
    Part1 = 0,
    BriefHospitalCourse = 1,
    Part2 = 2,
    DischargeInstructions = 3,
    Other = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DkAlgorithm {
    Greedy = 0,
    Beam = 1,
    Nucleus = 2,
    Contrastive = 3,
    Ensemble = 4,
}

/// Metric ids, in leaderboard column order.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DkMetric {
    Bleu4 = 0,
    Rouge1 = 1,
    Rouge2 = 2,
    RougeL = 3,
    BertScore = 4,
    Meteor = 5,
    AlignScore = 6,
    Medcon = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DkStopReason {
    Eos = 0,
    MaxLen = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DkDecodeConfig {
    pub max_new_tokens: usize,
    pub beam_width: usize,
    pub nucleus_p: f64,
    pub contrastive_k: usize,
    pub contrastive_alpha: f64,
    pub seed: u64,
    pub length_penalty: f64,
}

pub struct DkNote {
    inner: ParsedNote,
}

pub struct DkToyLm {
    inner: ToyLm,
}

pub struct DkTensorMap {
    inner: NamedTensorMap,
}

pub struct DkDecodeTrace {
    inner: DecodeTrace,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

type Failure = (DkStatus, String);

/// Runs `f`, converting errors and panics into a status plus last-error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            DkStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            DkStatus::Panic
        }
    }
}

fn fail<T>(status: DkStatus, msg: impl ToString) -> Result<T, Failure> {
    Err((status, msg.to_string()))
}

fn null_check<T>(p: *const T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        fail(DkStatus::NullPointer, format!("{what} is null"))
    } else {
        Ok(())
    }
}

/// # Safety
/// `p` must be null or a NUL-terminated string valid for reads.
unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    null_check(p, what)?;
    CStr::from_ptr(p).to_str().or_else(|_| fail(DkStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

/// # Safety
/// `p` must be null only when `len` is 0, else valid for `len` reads.
unsafe fn read_slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    null_check(p, what)?;
    Ok(std::slice::from_raw_parts(p, len))
}

fn boxed<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next `dk_` call on the same thread.
#[no_mangle]
pub extern "C" fn dk_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dk_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

// ---- notes ----

/// Parses a note. `lexicon` is the text of a header lexicon file, or null
/// for the default lexicon.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dk_note_parse(
    note_id: *const c_char,
    text: *const c_char,
    lexicon: *const c_char,
    out: *mut *mut DkNote,
) -> DkStatus {
    guard(|| {
        null_check(out, "out")?;
        let id = read_str(note_id, "note_id")?;
        let text = read_str(text, "text")?;
        let lex = if lexicon.is_null() {
            HeaderLexicon::default()
        } else {
            read_str(lexicon, "lexicon")?.parse().or_else(|e| fail(DkStatus::InvalidArgument, e))?
        };
        let note = parse_note(id, text, &lex).or_else(|e| fail(DkStatus::ParseError, format!("note {id}: {e}")))?;
        *out = boxed(DkNote { inner: note });
        Ok(())
    })
}

/// # Safety
/// `note` must be null or a handle from [`dk_note_parse`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dk_note_free(note: *mut DkNote) {
    if !note.is_null() {
        drop(Box::from_raw(note));
    }
}

/// # Safety
/// `note` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dk_note_section_count(note: *const DkNote) -> usize {
    note.as_ref().map_or(0, |n| n.inner.sections.len())
}

/// Kind and byte range `[start, end)` of section `index`.
///
/// # Safety
/// `note` must be a live handle; output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn dk_note_section(
    note: *const DkNote,
    index: usize,
    kind: *mut DkSectionKind,
    start: *mut usize,
    end: *mut usize,
) -> DkStatus {
    guard(|| {
        null_check(note, "note")?;
        null_check(kind, "kind")?;
        null_check(start, "start")?;
        null_check(end, "end")?;
        let n = &(*note).inner;
        let s = n.sections.get(index).map_or_else(|| fail(DkStatus::OutOfRange, format!("section {index}")), Ok)?;
        *kind = match s.kind {
            SectionKind::Part1 => DkSectionKind::Part1,
            SectionKind::BriefHospitalCourse => DkSectionKind::BriefHospitalCourse,
            SectionKind::Part2 => DkSectionKind::Part2,
            SectionKind::DischargeInstructions => DkSectionKind::DischargeInstructions,
            SectionKind::Other => DkSectionKind::Other,
        };
        *start = s.start;
        *end = s.end;
        Ok(())
    })
}

/// The concatenated section bodies; free with [`dk_string_free`].
///
/// # Safety
/// `note` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dk_note_reconstruct(note: *const DkNote, out: *mut *mut c_char) -> DkStatus {
    guard(|| {
        null_check(note, "note")?;
        null_check(out, "out")?;
        let text = reconstruct(&(*note).inner);
        *out = CString::new(text).or_else(|e| fail(DkStatus::InvalidArgument, e))?.into_raw();
        Ok(())
    })
}

// ---- budgets and metrics ----

/// Nearest-rank percentile of `counts`, rounded up to a multiple.
///
/// # Safety
/// `counts` must be valid for `len` reads; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dk_percentile_budget(
    counts: *const usize,
    len: usize,
    percentile: f64,
    multiple: usize,
    out: *mut usize,
) -> DkStatus {
    guard(|| {
        null_check(out, "out")?;
        let counts = read_slice(counts, len, "counts")?;
        let policy = TokenBudgetPolicy::new(percentile, multiple).or_else(|e| fail(DkStatus::InvalidArgument, e))?;
        *out = percentile_budget(counts, &policy).or_else(|e| fail(DkStatus::InvalidArgument, e))?;
        Ok(())
    })
}

fn metric_of(m: DkMetric) -> Metric {
    Metric::ALL[m as usize]
}

/// Scores one pair on a lexical metric, in [0, 1]. Model-based metrics
/// return `DK_STATUS_INVALID_ARGUMENT`.
///
/// # Safety
/// Strings must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dk_metric_score(
    metric: DkMetric,
    hypothesis: *const c_char,
    reference: *const c_char,
    out: *mut f64,
) -> DkStatus {
    guard(|| {
        null_check(out, "out")?;
        let h = read_str(hypothesis, "hypothesis")?;
        let r = read_str(reference, "reference")?;
        let m = metric_of(metric);
        *out = m.lexical(h, r).map_or_else(|| fail(DkStatus::InvalidArgument, format!("{m} needs an external scorer")), Ok)?;
        Ok(())
    })
}

/// Mean of eight combined metric values given in leaderboard column order.
///
/// # Safety
/// `values` must be valid for 8 reads; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dk_aggregate_overall(values: *const f64, out: *mut f64) -> DkStatus {
    guard(|| {
        null_check(out, "out")?;
        let v = read_slice(values, Metric::ALL.len(), "values")?;
        let combined = Metric::ALL.iter().copied().zip(v.iter().copied()).collect();
        *out = aggregate_overall(&combined).expect("all eight present");
        Ok(())
    })
}

// ---- decoding ----

#[no_mangle]
pub extern "C" fn dk_decode_config_default() -> DkDecodeConfig {
    let d = DecodeConfig::default();
    DkDecodeConfig {
        max_new_tokens: d.max_new_tokens,
        beam_width: d.beam_width,
        nucleus_p: d.nucleus_p,
        contrastive_k: d.contrastive_k,
        contrastive_alpha: d.contrastive_alpha,
        seed: d.seed,
        length_penalty: d.length_penalty,
    }
}

/// Loads a table model from `{"logits": [[..]], "embeddings": [[..]], "eos": id}`.
///
/// # Safety
/// `json` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dk_toy_lm_from_json(json: *const c_char, out: *mut *mut DkToyLm) -> DkStatus {
    guard(|| {
        null_check(out, "out")?;
        let lm = ToyLm::from_json(read_str(json, "json")?).or_else(|e| fail(DkStatus::InvalidArgument, e))?;
        *out = boxed(DkToyLm { inner: lm });
        Ok(())
    })
}

/// # Safety
/// `lm` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dk_toy_lm_free(lm: *mut DkToyLm) {
    if !lm.is_null() {
        drop(Box::from_raw(lm));
    }
}

/// Decodes from `prefix`. `lm_b` is the second model for ensemble decoding
/// and is ignored (may be null) otherwise.
///
/// # Safety
/// Handles must be live; `prefix` valid for `prefix_len` reads; `config`
/// readable; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dk_decode(
    lm: *const DkToyLm,
    lm_b: *const DkToyLm,
    algorithm: DkAlgorithm,
    prefix: *const u32,
    prefix_len: usize,
    config: *const DkDecodeConfig,
    out: *mut *mut DkDecodeTrace,
) -> DkStatus {
    guard(|| {
        null_check(lm, "lm")?;
        null_check(config, "config")?;
        null_check(out, "out")?;
        let lm = &(*lm).inner;
        let prefix = read_slice(prefix, prefix_len, "prefix")?;
        use dischargekit::decode::LanguageModel;
        if let Some(t) = prefix.iter().find(|&&t| t as usize >= lm.vocab_size()) {
            return fail(DkStatus::InvalidArgument, format!("prefix token {t} outside vocabulary"));
        }
        let c = &*config;
        let cfg = DecodeConfig {
            max_new_tokens: c.max_new_tokens,
            beam_width: c.beam_width,
            nucleus_p: c.nucleus_p,
            contrastive_k: c.contrastive_k,
            contrastive_alpha: c.contrastive_alpha,
            seed: c.seed,
            length_penalty: c.length_penalty,
        };
        let result = match algorithm {
            DkAlgorithm::Greedy => greedy_decode(lm, prefix, &cfg),
            DkAlgorithm::Beam => beam_decode(lm, prefix, &cfg),
            DkAlgorithm::Nucleus => nucleus_decode(lm, prefix, &cfg),
            DkAlgorithm::Contrastive => contrastive_decode(lm, prefix, &cfg),
            DkAlgorithm::Ensemble => {
                null_check(lm_b, "lm_b")?;
                ensemble_greedy_decode(lm, &(*lm_b).inner, prefix, &cfg)
            }
        };
        let trace = result.or_else(|e| fail(DkStatus::DecodeError, e))?;
        *out = boxed(DkDecodeTrace { inner: trace });
        Ok(())
    })
}

/// # Safety
/// `trace` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dk_trace_len(trace: *const DkDecodeTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.inner.tokens.len())
}

/// Emitted tokens; valid while the trace lives.
///
/// # Safety
/// `trace` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dk_trace_tokens(trace: *const DkDecodeTrace) -> *const u32 {
    trace.as_ref().map_or(ptr::null(), |t| t.inner.tokens.as_ptr())
}

/// # Safety
/// `trace` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dk_trace_stop_reason(trace: *const DkDecodeTrace) -> DkStopReason {
    match trace.as_ref().map(|t| t.inner.stop_reason) {
        Some(StopReason::Eos) => DkStopReason::Eos,
        _ => DkStopReason::MaxLen,
    }
}

/// # Safety
/// `trace` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dk_trace_free(trace: *mut DkDecodeTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

// ---- tensor maps and merging ----

#[no_mangle]
pub extern "C" fn dk_tensor_map_new() -> *mut DkTensorMap {
    boxed(DkTensorMap { inner: NamedTensorMap::new() })
}

/// # Safety
/// `map` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dk_tensor_map_free(map: *mut DkTensorMap) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}

/// Inserts (or replaces) a row-major f32 tensor.
///
/// # Safety
/// `map` must be live; `shape` valid for `ndim` reads; `data` valid for the
/// product of `shape` reads.
#[no_mangle]
pub unsafe extern "C" fn dk_tensor_map_insert(
    map: *mut DkTensorMap,
    name: *const c_char,
    shape: *const usize,
    ndim: usize,
    data: *const f32,
) -> DkStatus {
    guard(|| {
        null_check(map, "map")?;
        let name = read_str(name, "name")?;
        let shape = read_slice(shape, ndim, "shape")?.to_vec();
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let numel = numel.map_or_else(|| fail(DkStatus::InvalidArgument, "shape overflows"), Ok)?;
        let data = read_slice(data, numel, "data")?.to_vec();
        let t = Tensor::new(shape, data).or_else(|e| fail(DkStatus::InvalidArgument, e))?;
        (*map).inner.insert(name, t);
        Ok(())
    })
}

/// Borrows the data of tensor `name`; valid until the map is modified or
/// freed.
///
/// # Safety
/// `map` must be live; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn dk_tensor_map_get(
    map: *const DkTensorMap,
    name: *const c_char,
    data: *mut *const f32,
    numel: *mut usize,
) -> DkStatus {
    guard(|| {
        null_check(map, "map")?;
        null_check(data, "data")?;
        null_check(numel, "numel")?;
        let name = read_str(name, "name")?;
        let t = (*map).inner.get(name).map_or_else(|| fail(DkStatus::InvalidArgument, format!("no tensor {name}")), Ok)?;
        *data = t.data().as_ptr();
        *numel = t.numel();
        Ok(())
    })
}

/// # Safety
/// `path` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dk_tensor_map_load(path: *const c_char, out: *mut *mut DkTensorMap) -> DkStatus {
    guard(|| {
        null_check(out, "out")?;
        let path = read_str(path, "path")?;
        let m = load_tensor_map(path).or_else(|e| fail(DkStatus::IoError, format!("{path}: {e}")))?;
        *out = boxed(DkTensorMap { inner: m });
        Ok(())
    })
}

/// # Safety
/// `map` must be live; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn dk_tensor_map_save(map: *const DkTensorMap, path: *const c_char) -> DkStatus {
    guard(|| {
        null_check(map, "map")?;
        let path = read_str(path, "path")?;
        save_tensor_map(&(*map).inner, path).or_else(|e| fail(DkStatus::IoError, format!("{path}: {e}")))
    })
}

/// TIES-merges `count` task-vector maps. `weights` may be null for equal
/// weights, else it holds `count` entries.
///
/// # Safety
/// `maps` must hold `count` live handles; `weights` null or valid for
/// `count` reads; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dk_ties_merge(
    maps: *const *const DkTensorMap,
    count: usize,
    density: f64,
    weights: *const f64,
    lambda: f64,
    out: *mut *mut DkTensorMap,
) -> DkStatus {
    guard(|| {
        null_check(out, "out")?;
        let handles = read_slice(maps, count, "maps")?;
        let mut inputs = Vec::with_capacity(count);
        for (i, &h) in handles.iter().enumerate() {
            null_check(h, &format!("maps[{i}]"))?;
            inputs.push((*h).inner.clone());
        }
        let weights = if weights.is_null() { None } else { Some(read_slice(weights, count, "weights")?.to_vec()) };
        let cfg = TiesConfig { density, weights, lambda };
        let merged = ties_merge(&inputs, &cfg).or_else(|e| fail(DkStatus::MergeError, e))?;
        *out = boxed(DkTensorMap { inner: merged });
        Ok(())
    })
}

/// Merges a LoRA adapter map (`<name>.lora_A` / `<name>.lora_B` tensors)
/// into `base`.
///
/// # Safety
/// Handles must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dk_lora_merge(
    base: *const DkTensorMap,
    adapter: *const DkTensorMap,
    alpha: u32,
    out: *mut *mut DkTensorMap,
) -> DkStatus {
    guard(|| {
        null_check(base, "base")?;
        null_check(adapter, "adapter")?;
        null_check(out, "out")?;
        let adapter = LoraAdapter::from_tensor_map(&(*adapter).inner, alpha).or_else(|e| fail(DkStatus::MergeError, e))?;
        let merged = lora_merge(&(*base).inner, &adapter).or_else(|e| fail(DkStatus::MergeError, e))?;
        *out = boxed(DkTensorMap { inner: merged });
        Ok(())
    })
}
