// SPDX-License-Identifier: Apache-2.0

//! Shared generators and brute-force reference implementations for the
//! integration tests. Nothing here calls into the code under test except to
//! build its input types.

#![allow(dead_code)]

use dischargekit::decode::{toy_lm_from_tables, ToyLm};
use dischargekit::merge::{NamedTensorMap, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- decoding

pub struct ToyCase {
    pub lm: ToyLm,
    pub prefix: Vec<u32>,
    pub steps: usize,
}

/// Vocabulary 2..=5, 1..=4 steps, logits uniform in [-3, 3], 3-dim
/// embeddings in [-1, 1], random EOS, a one-token non-EOS prefix.
pub fn random_toy_case(rng: &mut ChaCha8Rng) -> ToyCase {
    let vocab = rng.random_range(2..=5usize);
    let steps = rng.random_range(1..=4usize);
    let logits: Vec<Vec<f64>> =
        (0..vocab).map(|_| (0..vocab).map(|_| rng.random_range(-3.0..=3.0)).collect()).collect();
    let emb: Vec<Vec<f64>> = (0..vocab).map(|_| (0..3).map(|_| rng.random_range(-1.0..=1.0)).collect()).collect();
    let eos = rng.random_range(0..vocab) as u32;
    let mut first = rng.random_range(0..vocab - 1) as u32;
    if first >= eos {
        first += 1;
    }
    ToyCase { lm: toy_lm_from_tables(logits, emb, eos).unwrap(), prefix: vec![first], steps }
}

fn ref_log_softmax(row: &[f64]) -> Vec<f64> {
    let mut m = f64::NEG_INFINITY;
    for &x in row {
        if x > m {
            m = x;
        }
    }
    let mut z = 0.0;
    for &x in row {
        z += (x - m).exp();
    }
    let lse = z.ln() + m;
    row.iter().map(|&x| x - lse).collect()
}

/// Best sequence over all of length `1..=max_len` that end at EOS or run to
/// `max_len` without one, maximising `sum logp / len^lp`; ties go to the
/// lexicographically smallest sequence.
pub fn exhaustive_best(lm: &ToyLm, prefix: &[u32], max_len: usize, lp: f64) -> Vec<u32> {
    #[allow(clippy::too_many_arguments)]
    fn visit(
        table: &[Vec<f64>],
        eos: u32,
        max_len: usize,
        lp: f64,
        last: u32,
        seq: &mut Vec<u32>,
        score: f64,
        best: &mut Option<(f64, Vec<u32>)>,
    ) {
        let logp = ref_log_softmax(&table[last as usize]);
        for v in 0..table.len() as u32 {
            seq.push(v);
            let s = score + logp[v as usize];
            if v == eos || seq.len() == max_len {
                let value = s / (seq.len() as f64).powf(lp);
                let better = match best {
                    None => true,
                    Some((bv, bs)) => value > *bv || (value == *bv && seq.as_slice() < bs.as_slice()),
                };
                if better {
                    *best = Some((value, seq.clone()));
                }
            } else {
                visit(table, eos, max_len, lp, v, seq, s, best);
            }
            seq.pop();
        }
    }
    let mut best = None;
    let eos = dischargekit::decode::LanguageModel::eos_id(lm);
    visit(lm.logit_table(), eos, max_len, lp, *prefix.last().unwrap(), &mut Vec::new(), 0.0, &mut best);
    best.unwrap().1
}

// ---------------------------------------------------------------- merging

fn random_shape(rng: &mut ChaCha8Rng, max_numel: usize) -> Vec<usize> {
    loop {
        let ndim = rng.random_range(0..=3usize);
        let shape: Vec<usize> = (0..ndim).map(|_| rng.random_range(1..=8usize)).collect();
        if shape.iter().product::<usize>() <= max_numel {
            return shape;
        }
    }
}

/// Values from a small grid so that magnitude ties, zeros and sign
/// cancellations all occur.
fn grid_value(rng: &mut ChaCha8Rng) -> f32 {
    if rng.random_bool(0.5) {
        rng.random_range(-4i32..=4) as f32 * 0.5
    } else {
        rng.random_range(-2.0f32..2.0)
    }
}

/// `count` maps sharing names and shapes, each tensor at most `max_numel`
/// elements.
pub fn random_map_family(rng: &mut ChaCha8Rng, count: usize, max_numel: usize) -> Vec<NamedTensorMap> {
    let tensors = rng.random_range(1..=3usize);
    let shapes: Vec<Vec<usize>> = (0..tensors).map(|_| random_shape(rng, max_numel)).collect();
    (0..count)
        .map(|_| {
            let mut m = NamedTensorMap::new();
            for (i, shape) in shapes.iter().enumerate() {
                let numel = shape.iter().product::<usize>();
                let data = (0..numel).map(|_| grid_value(rng)).collect();
                m.insert(format!("layer{i}.weight"), Tensor::new(shape.clone(), data).unwrap());
            }
            m
        })
        .collect()
}

fn ref_keep(numel: usize, density: f64) -> usize {
    let mut k = 0;
    while k < numel && (k as f64) < density * numel as f64 - 1e-9 {
        k += 1;
    }
    k
}

/// Rank-counting trim: entry `i` survives when fewer than `keep` entries beat
/// it (larger magnitude, or equal magnitude at a lower index).
fn ref_trim(v: &[f32], keep: usize) -> Vec<f32> {
    (0..v.len())
        .map(|i| {
            let beaten_by = (0..v.len()).filter(|&j| v[j].abs() > v[i].abs() || (v[j].abs() == v[i].abs() && j < i)).count();
            if beaten_by < keep {
                v[i]
            } else {
                0.0
            }
        })
        .collect()
}

pub fn ref_ties(inputs: &[NamedTensorMap], density: f64, weights: &[f64], lambda: f64) -> NamedTensorMap {
    let mut out = NamedTensorMap::new();
    for name in inputs[0].names() {
        let t0 = inputs[0].get(name).unwrap();
        let keep = ref_keep(t0.numel(), density);
        let trimmed: Vec<Vec<f32>> = inputs.iter().map(|m| ref_trim(m.get(name).unwrap().data(), keep)).collect();
        let mut data = Vec::with_capacity(t0.numel());
        for j in 0..t0.numel() {
            let mut total = 0.0f64;
            for (t, w) in trimmed.iter().zip(weights) {
                total += w * t[j] as f64;
            }
            let mut num = 0.0f64;
            let mut den = 0.0f64;
            for (t, w) in trimmed.iter().zip(weights) {
                let x = t[j];
                let agrees = if total >= 0.0 { x > 0.0 } else { x < 0.0 };
                if agrees {
                    num += w * x as f64;
                    den += w;
                }
            }
            data.push(if den == 0.0 { 0.0 } else { (num / den * lambda) as f32 });
        }
        out.insert(name.clone(), Tensor::new(t0.shape().to_vec(), data).unwrap());
    }
    out
}

pub struct LoraCase {
    pub base: NamedTensorMap,
    pub adapter: NamedTensorMap,
    pub alpha: u32,
}

/// A base map of 2-D weights plus an adapter for some of them; every tensor
/// stays within `max_numel` elements.
pub fn random_lora_case(rng: &mut ChaCha8Rng, max_numel: usize) -> LoraCase {
    let rank = rng.random_range(1..=4usize);
    let mut base = NamedTensorMap::new();
    let mut adapter = NamedTensorMap::new();
    for i in 0..rng.random_range(1..=3usize) {
        let (rows, cols) = loop {
            let r = rng.random_range(1..=8usize);
            let c = rng.random_range(1..=8usize);
            if r * c <= max_numel && r * rank <= max_numel && rank * c <= max_numel {
                break (r, c);
            }
        };
        let w = (0..rows * cols).map(|_| grid_value(rng)).collect();
        base.insert(format!("w{i}"), Tensor::new(vec![rows, cols], w).unwrap());
        if i == 0 || rng.random_bool(0.6) {
            let a = (0..rank * cols).map(|_| grid_value(rng)).collect();
            let b = (0..rows * rank).map(|_| grid_value(rng)).collect();
            adapter.insert(format!("w{i}.lora_A"), Tensor::new(vec![rank, cols], a).unwrap());
            adapter.insert(format!("w{i}.lora_B"), Tensor::new(vec![rows, rank], b).unwrap());
        }
    }
    base.insert("norm.bias", Tensor::new(vec![2], vec![0.25, -1.0]).unwrap());
    LoraCase { base, adapter, alpha: rng.random_range(1..=32u32) }
}

/// Triple loop: `W'[i][j] = W[i][j] + (alpha / r) * sum_k B[i][k] * A[k][j]`.
pub fn ref_lora(base: &NamedTensorMap, adapter: &NamedTensorMap, alpha: u32) -> NamedTensorMap {
    let mut out = NamedTensorMap::new();
    for (name, w) in base.iter() {
        let (Some(a), Some(b)) = (adapter.get(&format!("{name}.lora_A")), adapter.get(&format!("{name}.lora_B"))) else {
            out.insert(name.clone(), w.clone());
            continue;
        };
        let r = a.shape()[0];
        let (rows, cols) = (w.shape()[0], w.shape()[1]);
        let scale = alpha as f64 / r as f64;
        let mut data = vec![0.0f32; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                let mut acc = 0.0f64;
                for k in 0..r {
                    acc += b.data()[i * r + k] as f64 * a.data()[k * cols + j] as f64;
                }
                data[i * cols + j] = (w.data()[i * cols + j] as f64 + scale * acc) as f32;
            }
        }
        out.insert(name.clone(), Tensor::new(w.shape().to_vec(), data).unwrap());
    }
    out
}

pub fn maps_equal(a: &NamedTensorMap, b: &NamedTensorMap) -> bool {
    a.len() == b.len()
        && a.iter().zip(b.iter()).all(|((na, ta), (nb, tb))| na == nb && ta.shape() == tb.shape() && ta.data() == tb.data())
}

// ---------------------------------------------------------------- metrics

/// Lowercase, split on whitespace, and make each ASCII punctuation mark its
/// own token.
pub fn ref_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for c in text.to_lowercase().chars() {
        if c.is_whitespace() || c.is_ascii_punctuation() {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
            if c.is_ascii_punctuation() {
                out.push(c.to_string());
            }
        } else {
            word.push(c);
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

fn grams(tokens: &[String], n: usize) -> Vec<&[String]> {
    if tokens.len() < n {
        return Vec::new();
    }
    (0..=tokens.len() - n).map(|i| &tokens[i..i + n]).collect()
}

/// (clipped matches, hypothesis n-grams, reference n-grams) by linear scans.
pub fn ref_overlap(hyp: &[String], reference: &[String], n: usize) -> (usize, usize, usize) {
    let h = grams(hyp, n);
    let r = grams(reference, n);
    let mut matches = 0;
    for (i, g) in h.iter().enumerate() {
        if h[..i].contains(g) {
            continue;
        }
        let in_h = h.iter().filter(|x| *x == g).count();
        let in_r = r.iter().filter(|x| *x == g).count();
        matches += in_h.min(in_r);
    }
    (matches, h.len(), r.len())
}

pub fn ref_prf(overlap: usize, hyp_total: usize, ref_total: usize) -> (f64, f64, f64) {
    let p = if hyp_total == 0 { 0.0 } else { overlap as f64 / hyp_total as f64 };
    let r = if ref_total == 0 { 0.0 } else { overlap as f64 / ref_total as f64 };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

pub fn ref_rouge_n(hyp: &str, reference: &str, n: usize) -> f64 {
    let (o, h, r) = ref_overlap(&ref_tokens(hyp), &ref_tokens(reference), n);
    ref_prf(o, h, r).2
}

/// Longest common subsequence by full-table recursion.
pub fn ref_lcs(a: &[String], b: &[String]) -> usize {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in (0..a.len()).rev() {
        for j in (0..b.len()).rev() {
            t[i][j] = if a[i] == b[j] { 1 + t[i + 1][j + 1] } else { t[i + 1][j].max(t[i][j + 1]) };
        }
    }
    t[0][0]
}

pub fn ref_rouge_l(hyp: &str, reference: &str) -> f64 {
    let (h, r) = (ref_tokens(hyp), ref_tokens(reference));
    ref_prf(ref_lcs(&h, &r), h.len(), r.len()).2
}

/// Sentence BLEU-4 with exponential smoothing of zero-match orders and the
/// usual brevity penalty.
pub fn ref_bleu(hyp: &str, reference: &str) -> f64 {
    let (h, r) = (ref_tokens(hyp), ref_tokens(reference));
    if h.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0f64;
    let mut smoothing = 1.0f64;
    for n in 1..=4 {
        let (m, total, _) = ref_overlap(&h, &r, n);
        let denom = if total == 0 { 1.0 } else { total as f64 };
        let p = if m > 0 {
            m as f64 / denom
        } else if n == 1 {
            return 0.0;
        } else {
            smoothing *= 2.0;
            1.0 / (smoothing * denom)
        };
        log_sum += p.ln();
    }
    let ratio = r.len() as f64 / h.len() as f64;
    let bp = if ratio > 1.0 { (1.0 - ratio).exp() } else { 1.0 };
    bp * (log_sum / 4.0).exp()
}

const WORDS: &[&str] = &[
    "the", "patient", "was", "admitted", "with", "fever", "and", "cough", "treated", "antibiotics", "discharged",
    "home", "stable", "pain", "improved", "chest", "x-ray", "clear", "follow", "up", "in", "two", "weeks", "Mr.",
    "___", ",", ".", "CT", "showed", "no", "acute", "process",
];

pub fn random_sentence(rng: &mut ChaCha8Rng, max_words: usize) -> String {
    let n = rng.random_range(0..=max_words);
    (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

// ---------------------------------------------------------------- notes

pub struct SyntheticNote {
    pub text: String,
    pub bhc_content: String,
    pub di_content: String,
}

fn body_lines(rng: &mut ChaCha8Rng, max_lines: usize) -> Vec<String> {
    let lines = rng.random_range(1..=max_lines);
    const MENTIONS: &[&str] = &[
        "as noted in Brief Hospital Course: above",
        "see Discharge Instructions: below",
        "per the discharge instructions: reviewed",
        "repeat Medications: list reconciled",
    ];
    (0..lines)
        .map(|_| {
            let mut s = random_sentence(rng, 10);
            if s.is_empty() {
                s.push_str("stable");
            }
            if rng.random_bool(0.3) {
                s = format!("Name: ___ {s}");
            }
            if rng.random_bool(0.3) {
                s = format!("{s} {}", MENTIONS[rng.random_range(0..MENTIONS.len())]);
            }
            s
        })
        .collect()
}

/// A note with Part1, BHC, an optional stop header before DI, DI and an
/// optional trailing section. Line endings are LF, CRLF or mixed.
pub fn synthetic_note(rng: &mut ChaCha8Rng) -> SyntheticNote {
    let style = rng.random_range(0..3u8);
    let mut text = String::new();
    let eol = |rng: &mut ChaCha8Rng| match style {
        0 => "\n",
        1 => "\r\n",
        _ if rng.random_bool(0.5) => "\r\n",
        _ => "\n",
    };
    let push_lines = |text: &mut String, lines: &[String], rng: &mut ChaCha8Rng| {
        for l in lines {
            text.push_str(l);
            text.push_str(eol(rng));
        }
    };
    let part1 = body_lines(rng, 4);
    push_lines(&mut text, &part1, rng);

    let bhc_header = if rng.random_bool(0.5) { "Brief Hospital Course:" } else { "  BRIEF HOSPITAL COURSE:" };
    let bhc = body_lines(rng, 5);
    push_lines(&mut text, &[bhc_header.to_string()], rng);
    let bhc_start = text.len();
    push_lines(&mut text, &bhc, rng);
    let bhc_content = text[bhc_start..].trim().to_string();

    if rng.random_bool(0.5) {
        push_lines(&mut text, &["Medications on Admission:".to_string(), "aspirin 81 mg".to_string()], rng);
    }

    let di = body_lines(rng, 4);
    push_lines(&mut text, &["Discharge Instructions:".to_string()], rng);
    let di_start = text.len();
    push_lines(&mut text, &di, rng);
    let mut di_end = text.len();
    if rng.random_bool(0.5) {
        push_lines(&mut text, &["Followup Instructions:".to_string(), "___".to_string()], rng);
    } else if rng.random_bool(0.5) {
        // no final line terminator
        text.truncate(text.trim_end_matches(['\r', '\n']).len());
        di_end = text.len();
    }
    let di_content = text[di_start..di_end].trim().to_string();
    SyntheticNote { text, bhc_content, di_content }
}

/// A note with `part1_words` tokens before BHC and `di_words` tokens of DI
/// content, as counted by the whitespace tokenizer.
pub fn sized_note(part1_words: usize, di_words: usize) -> String {
    format!(
        "{}\nBrief Hospital Course:\ncourse\nDischarge Instructions:\n{}\n",
        vec!["w"; part1_words].join(" "),
        vec!["d"; di_words].join(" ")
    )
}
