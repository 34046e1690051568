// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::external::{ScoreProvider, ScorerError};
use super::Metric;
use crate::context::TargetKind;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    pub hyp: String,
    #[serde(rename = "ref")]
    pub reference: String,
}

impl Pair {
    pub fn new(hyp: impl Into<String>, reference: impl Into<String>) -> Self {
        Self { hyp: hyp.into(), reference: reference.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("no {target} pairs to evaluate")]
    EmptyPairs { target: TargetKind },
    #[error("{metric} on {target}: {source}")]
    Scorer {
        metric: Metric,
        target: TargetKind,
        #[source]
        source: ScorerError,
    },
}

/// Metric values in [0, 1]. `bhc` and `di` hold per-target means over cases,
/// `combined` the mean of the two targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub cases: BTreeMap<TargetKind, usize>,
    pub bhc: BTreeMap<Metric, f64>,
    pub di: BTreeMap<Metric, f64>,
    pub combined: BTreeMap<Metric, f64>,
    /// Mean of the eight combined values; absent when any is missing.
    pub overall: Option<f64>,
    pub missing: Vec<Metric>,
}

/// Mean of all eight combined values, or `None` if any is absent.
pub fn aggregate_overall(combined: &BTreeMap<Metric, f64>) -> Option<f64> {
    let values: Option<Vec<f64>> = Metric::ALL.iter().map(|m| combined.get(m).copied()).collect();
    values.map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

impl MetricReport {
    /// Report from already-combined values, e.g. published leaderboard rows.
    pub fn from_combined(combined: BTreeMap<Metric, f64>) -> Self {
        let missing = Metric::ALL.iter().copied().filter(|m| !combined.contains_key(m)).collect();
        let overall = aggregate_overall(&combined);
        Self { cases: BTreeMap::new(), bhc: BTreeMap::new(), di: BTreeMap::new(), combined, overall, missing }
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn target_scores(
    metric: Metric,
    target: TargetKind,
    pairs: &[Pair],
    provider: Option<&dyn ScoreProvider>,
) -> Result<Option<f64>, EvalError> {
    if metric.is_external() {
        let Some(p) = provider else { return Ok(None) };
        let scores = p.score(metric, pairs).map_err(|source| EvalError::Scorer { metric, target, source })?;
        return Ok(Some(mean(&scores)));
    }
    let scores: Vec<f64> =
        pairs.par_iter().map(|p| metric.lexical(&p.hyp, &p.reference).expect("lexical metric")).collect();
    Ok(Some(mean(&scores)))
}

/// Scores both targets on every enabled metric. External metrics without a
/// provider, and metrics not enabled, are listed in `missing`.
pub fn evaluate_run(
    bhc_pairs: &[Pair],
    di_pairs: &[Pair],
    enabled: &[Metric],
    provider: Option<&dyn ScoreProvider>,
) -> Result<MetricReport, EvalError> {
    if bhc_pairs.is_empty() {
        return Err(EvalError::EmptyPairs { target: TargetKind::Bhc });
    }
    if di_pairs.is_empty() {
        return Err(EvalError::EmptyPairs { target: TargetKind::Di });
    }
    let mut bhc = BTreeMap::new();
    let mut di = BTreeMap::new();
    let mut combined = BTreeMap::new();
    let mut missing = Vec::new();
    for metric in Metric::ALL {
        if !enabled.contains(&metric) {
            missing.push(metric);
            continue;
        }
        let b = target_scores(metric, TargetKind::Bhc, bhc_pairs, provider)?;
        let d = target_scores(metric, TargetKind::Di, di_pairs, provider)?;
        match (b, d) {
            (Some(b), Some(d)) => {
                bhc.insert(metric, b);
                di.insert(metric, d);
                combined.insert(metric, (b + d) / 2.0);
            }
            _ => missing.push(metric),
        }
    }
    let overall = aggregate_overall(&combined);
    let cases = BTreeMap::from([(TargetKind::Bhc, bhc_pairs.len()), (TargetKind::Di, di_pairs.len())]);
    Ok(MetricReport { cases, bhc, di, combined, overall, missing })
}

/// Formats `value` with `decimals` places, rounding halves away from zero.
/// The nudge absorbs binary representation error in values such as 29.675.
pub fn format_fixed(value: f64, decimals: usize) -> String {
    let scale = 10f64.powi(decimals as i32);
    let nudge = value.signum() * 1e-9 * value.abs().max(1.0);
    format!("{:.*}", decimals, ((value + nudge) * scale).round() / scale)
}

/// Leaderboard table: Model, Overall, then the eight metrics, values x100.
pub fn render_table(rows: &[(String, MetricReport)], decimals: usize) -> String {
    let mut header = vec!["Model".to_string(), "Overall".to_string()];
    header.extend(Metric::ALL.iter().map(|m| m.name().to_string()));
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format_fixed(v * 100.0, decimals));
    let mut body: Vec<Vec<String>> = Vec::new();
    for (name, report) in rows {
        let mut cells = vec![name.clone(), fmt(report.overall)];
        cells.extend(Metric::ALL.iter().map(|m| fmt(report.combined.get(m).copied())));
        body.push(cells);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|c| body.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: &[String]| -> String {
        let padded: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(c, s)| if c == 0 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
            .collect();
        padded.join("  ").trim_end().to_string()
    };
    let mut out = line(&header);
    out.push('\n');
    out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
    out.push('\n');
    for r in &body {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(values: [f64; 8]) -> BTreeMap<Metric, f64> {
        Metric::ALL.iter().copied().zip(values.iter().map(|v| v / 100.0)).collect()
    }

    #[test]
    fn published_rows() {
        let aehrc = aggregate_overall(&row([9.7, 41.4, 19.2, 28.4, 38.3, 39.8, 27.4, 33.2])).unwrap() * 100.0;
        assert!((aehrc - 29.675).abs() < 1e-9);
        let llama = aggregate_overall(&row([10.05, 35.65, 13.56, 25.65, 38.66, 39.98, 25.93, 34.90])).unwrap() * 100.0;
        assert!((llama - 28.0475).abs() < 1e-9);
        assert_eq!(aggregate_overall(&row([0.0; 8])), Some(0.0));
    }

    #[test]
    fn missing_metric_leaves_overall_undefined() {
        let mut r = row([10.0; 8]);
        r.remove(&Metric::Medcon);
        let rep = MetricReport::from_combined(r);
        assert_eq!(rep.overall, None);
        assert_eq!(rep.missing, vec![Metric::Medcon]);
    }

    #[test]
    fn lexical_only_run() {
        let bhc = [Pair::new("the cat sat on the mat", "the cat sat on the mat")];
        let di = [Pair::new("alpha", "beta")];
        let rep = evaluate_run(&bhc, &di, &Metric::ALL, None).unwrap();
        assert_eq!(rep.combined[&Metric::Rouge1], 0.5);
        assert_eq!(rep.missing, vec![Metric::BertScore, Metric::AlignScore, Metric::Medcon]);
        assert_eq!(rep.overall, None);
        assert!(matches!(evaluate_run(&[], &di, &Metric::ALL, None), Err(EvalError::EmptyPairs { .. })));
    }

    struct Fixed(f64);
    impl ScoreProvider for Fixed {
        fn score(&self, _: Metric, pairs: &[Pair]) -> Result<Vec<f64>, ScorerError> {
            Ok(vec![self.0; pairs.len()])
        }
    }

    #[test]
    fn provider_fills_external_metrics() {
        let p = [Pair::new("a b", "a b")];
        let rep = evaluate_run(&p, &p, &Metric::ALL, Some(&Fixed(0.5))).unwrap();
        assert!(rep.missing.is_empty());
        assert_eq!(rep.combined[&Metric::AlignScore], 0.5);
        assert!(rep.overall.is_some());
    }

    #[test]
    fn half_up_rounding() {
        assert_eq!(format_fixed(29.675, 2), "29.68");
        assert_eq!(format_fixed(29.675, 1), "29.7");
        assert_eq!(format_fixed(28.0475, 2), "28.05");
        assert_eq!(format_fixed(0.0, 2), "0.00");
        assert_eq!(format_fixed(1.004, 2), "1.00");
    }

    #[test]
    fn table_layout() {
        let rep = MetricReport::from_combined(row([9.7, 41.4, 19.2, 28.4, 38.3, 39.8, 27.4, 33.2]));
        let t = render_table(&[("aehrc".into(), rep)], 1);
        let lines: Vec<&str> = t.lines().collect();
        assert!(lines[0].starts_with("Model"));
        assert!(lines[0].contains("Overall  BLEU-4  ROUGE-1"));
        assert!(lines[2].contains("29.7"));
        assert!(lines[2].contains("9.7"));
    }
}
