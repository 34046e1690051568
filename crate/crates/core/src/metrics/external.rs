// SPDX-License-Identifier: Apache-2.0

//! Model-based metrics scored by a child process.
//!
//! One request per line on the child's stdin:
//! `{"metric": "BERTScore", "pairs": [{"hyp": "...", "ref": "..."}]}`
//! and one response per line on its stdout: `{"scores": [0.91, ...]}`.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::Deserialize;
use serde_json::json;
use thiserror::Error;

use super::report::Pair;
use super::Metric;

/// Environment variable naming the scorer executable.
pub const SCORER_ENV: &str = "DISCHARGEKIT_SCORER";

/// Scores within this distance outside [0, 1] are clamped rather than rejected.
const CLAMP_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScorerError {
    #[error("score provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("{metric} score {value} for pair {index} is outside [0, 1]")]
    OutOfRangeScore { metric: Metric, index: usize, value: f64 },
}

pub trait ScoreProvider: Send + Sync {
    /// One score in [0, 1] per pair, in order. Either every pair is scored or
    /// an error is returned.
    fn score(&self, metric: Metric, pairs: &[Pair]) -> Result<Vec<f64>, ScorerError>;
}

struct Channel {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl Drop for Channel {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// A persistent scorer process, spawned on first use and respawned on the
/// next batch after a failure.
pub struct ExternalScorer {
    program: String,
    args: Vec<String>,
    channel: Mutex<Option<Channel>>,
}

#[derive(Deserialize)]
struct Response {
    scores: Vec<f64>,
}

impl ExternalScorer {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        Self { program: program.into(), args, channel: Mutex::new(None) }
    }

    /// Scorer named by `DISCHARGEKIT_SCORER`, if set. The value is split on
    /// whitespace into program and arguments.
    pub fn from_env() -> Option<Self> {
        let value = std::env::var(SCORER_ENV).ok()?;
        let mut parts = value.split_whitespace().map(String::from);
        let program = parts.next()?;
        Some(Self::new(program, parts.collect()))
    }

    fn spawn(&self) -> Result<Channel, ScorerError> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| ScorerError::ProviderUnavailable(format!("{}: {e}", self.program)))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Channel { child, stdin, stdout })
    }

    fn exchange(channel: &mut Channel, request: &str) -> Result<String, ScorerError> {
        let unavailable = |e: std::io::Error| ScorerError::ProviderUnavailable(e.to_string());
        writeln!(channel.stdin, "{request}").map_err(unavailable)?;
        channel.stdin.flush().map_err(unavailable)?;
        let mut line = String::new();
        if channel.stdout.read_line(&mut line).map_err(unavailable)? == 0 {
            return Err(ScorerError::ProviderUnavailable("provider exited before responding".into()));
        }
        Ok(line)
    }
}

/// Checks and clamps a provider response for `expected` pairs.
pub(crate) fn validate_scores(metric: Metric, scores: Vec<f64>, expected: usize) -> Result<Vec<f64>, ScorerError> {
    if scores.len() != expected {
        return Err(ScorerError::MalformedResponse(format!("{} scores for {expected} pairs", scores.len())));
    }
    scores
        .into_iter()
        .enumerate()
        .map(|(index, value)| {
            if value.is_nan() {
                Err(ScorerError::MalformedResponse(format!("score {index} is NaN")))
            } else if (-CLAMP_SLACK..=1.0 + CLAMP_SLACK).contains(&value) {
                Ok(value.clamp(0.0, 1.0))
            } else {
                Err(ScorerError::OutOfRangeScore { metric, index, value })
            }
        })
        .collect()
}

impl ScoreProvider for ExternalScorer {
    fn score(&self, metric: Metric, pairs: &[Pair]) -> Result<Vec<f64>, ScorerError> {
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        let request = json!({ "metric": metric.name(), "pairs": pairs }).to_string();
        let mut slot = self.channel.lock().expect("scorer lock");
        if slot.is_none() {
            *slot = Some(self.spawn()?);
        }
        let result = Self::exchange(slot.as_mut().expect("channel present"), &request).and_then(|line| {
            serde_json::from_str::<Response>(&line).map_err(|e| ScorerError::MalformedResponse(e.to_string()))
        });
        match result {
            Ok(resp) => validate_scores(metric, resp.scores, pairs.len()),
            Err(e) => {
                // a broken channel is not reused
                *slot = None;
                Err(e)
            }
        }
    }
}
