// SPDX-License-Identifier: Apache-2.0

use std::sync::OnceLock;

use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};

use super::metric_tokens;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeteorParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for MeteorParams {
    fn default() -> Self {
        Self { alpha: 0.9, beta: 3.0, gamma: 0.5 }
    }
}

/// Search nodes spent per alignment stage before settling for the best
/// alignment found so far.
const SEARCH_BUDGET: usize = 100_000;

fn stemmer() -> &'static Stemmer {
    static STEMMER: OnceLock<Stemmer> = OnceLock::new();
    STEMMER.get_or_init(|| Stemmer::create(Algorithm::English))
}

/// Number of chunks: maximal runs of matches adjacent in both sequences.
pub(crate) fn count_chunks(alignment: &[Option<usize>]) -> usize {
    let mut chunks = 0;
    let mut prev: Option<(usize, usize)> = None;
    for (i, m) in alignment.iter().enumerate() {
        if let Some(j) = *m {
            match prev {
                Some((pi, pj)) if pi + 1 == i && pj + 1 == j => {}
                _ => chunks += 1,
            }
            prev = Some((i, j));
        }
    }
    chunks
}

struct Search<'a> {
    hyp_keys: &'a [String],
    ref_keys: &'a [String],
    /// Unmatched hypothesis positions, in order.
    open: Vec<usize>,
    /// For each open position, how many matches its key class still needs
    /// from it and the open positions after it.
    alignment: Vec<Option<usize>>,
    ref_used: Vec<bool>,
    best: Option<(usize, Vec<Option<usize>>)>,
    nodes: usize,
}

impl Search<'_> {
    fn remaining_capacity(&self, from: usize, key: &str) -> usize {
        self.open[from..].iter().filter(|&&i| self.hyp_keys[i] == key).count()
    }

    fn free_refs(&self, key: &str) -> usize {
        self.ref_keys.iter().zip(&self.ref_used).filter(|(k, &u)| !u && k.as_str() == key).count()
    }

    fn run(&mut self, pos: usize) {
        self.nodes += 1;
        if pos == self.open.len() {
            let chunks = count_chunks(&self.alignment);
            if self.best.as_ref().is_none_or(|(c, _)| chunks < *c) {
                self.best = Some((chunks, self.alignment.clone()));
            }
            return;
        }
        let i = self.open[pos];
        let key = self.hyp_keys[i].clone();
        let free = self.free_refs(&key);
        // options: chunk-extending ref first, then the other refs left to right
        let mut options: Vec<usize> = Vec::new();
        let prev_ref = i.checked_sub(1).and_then(|p| self.alignment[p]);
        if let Some(j) = prev_ref.map(|j| j + 1) {
            if j < self.ref_keys.len() && !self.ref_used[j] && self.ref_keys[j] == key {
                options.push(j);
            }
        }
        for j in 0..self.ref_keys.len() {
            if !self.ref_used[j] && self.ref_keys[j] == key && !options.contains(&j) {
                options.push(j);
            }
        }
        for j in options {
            if self.nodes >= SEARCH_BUDGET && self.best.is_some() {
                return;
            }
            self.alignment[i] = Some(j);
            self.ref_used[j] = true;
            self.run(pos + 1);
            self.ref_used[j] = false;
            self.alignment[i] = None;
        }
        // leaving i unmatched keeps the matching maximal only if later
        // positions of the same key can still take every free ref
        if free < self.remaining_capacity(pos, &key) && !(self.nodes >= SEARCH_BUDGET && self.best.is_some()) {
            self.run(pos + 1);
        }
    }
}

/// Adds a maximum-cardinality matching between equal keys of unmatched
/// positions, choosing among maximal matchings the one with fewest chunks.
fn align_stage(hyp_keys: &[String], ref_keys: &[String], alignment: &mut [Option<usize>], ref_used: &mut [bool]) {
    let open: Vec<usize> = (0..hyp_keys.len())
        .filter(|&i| alignment[i].is_none() && ref_keys.iter().zip(ref_used.iter()).any(|(k, &u)| !u && *k == hyp_keys[i]))
        .collect();
    if open.is_empty() {
        return;
    }
    let mut search = Search {
        hyp_keys,
        ref_keys,
        open,
        alignment: alignment.to_vec(),
        ref_used: ref_used.to_vec(),
        best: None,
        nodes: 0,
    };
    search.run(0);
    let (_, best) = search.best.expect("search reaches a leaf");
    for (i, m) in best.iter().enumerate() {
        if let Some(j) = *m {
            alignment[i] = Some(j);
            ref_used[j] = true;
        }
    }
}

/// METEOR over pre-tokenized, lowercased inputs. Alignment stages: exact
/// match, then stem match among the still-unmatched tokens.
pub fn meteor_tokens(hyp: &[String], refs: &[String], params: &MeteorParams) -> f64 {
    if hyp.is_empty() || refs.is_empty() {
        return 0.0;
    }
    let mut alignment = vec![None; hyp.len()];
    let mut ref_used = vec![false; refs.len()];
    align_stage(hyp, refs, &mut alignment, &mut ref_used);

    let stem = |ts: &[String]| -> Vec<String> { ts.iter().map(|t| stemmer().stem(t).into_owned()).collect() };
    let (hyp_stems, ref_stems) = (stem(hyp), stem(refs));
    // matched positions must not pair again; mask them with unmatched keys
    let hyp_stage: Vec<String> =
        hyp_stems.iter().zip(&alignment).map(|(s, m)| if m.is_some() { String::new() } else { s.clone() }).collect();
    let ref_stage: Vec<String> =
        ref_stems.iter().zip(&ref_used).map(|(s, &u)| if u { "\u{0}".to_string() } else { s.clone() }).collect();
    align_stage(&hyp_stage, &ref_stage, &mut alignment, &mut ref_used);

    let matches = alignment.iter().filter(|m| m.is_some()).count();
    if matches == 0 {
        return 0.0;
    }
    let chunks = count_chunks(&alignment);
    let m = matches as f64;
    let precision = m / hyp.len() as f64;
    let recall = m / refs.len() as f64;
    let fmean = precision * recall / (params.alpha * precision + (1.0 - params.alpha) * recall);
    let penalty = params.gamma * (chunks as f64 / m).powf(params.beta);
    fmean * (1.0 - penalty)
}

pub fn meteor(hypothesis: &str, reference: &str, params: &MeteorParams) -> f64 {
    meteor_tokens(&metric_tokens(hypothesis), &metric_tokens(reference), params)
}
