// SPDX-License-Identifier: Apache-2.0

//! Test double for the external processes used by `dischargekit`.
//!
//! `stub-provider scorer [--score X] [--exit-after N]` answers scoring
//! requests with a fixed score; with `--exit-after N` it answers N requests
//! and exits when the next one arrives, without responding.
//!
//! `stub-provider lm --model toy.json` serves a table model over the model
//! process protocol.

use std::io::{BufRead, Write};

use clap::{Parser, Subcommand};
use dischargekit::decode::{LanguageModel, ToyLm};
use serde_json::{json, Value};

#[derive(Parser)]
struct Cli {
    #[command(subcommand)]
    mode: Mode,
}

#[derive(Subcommand)]
enum Mode {
    Scorer {
        #[arg(long, default_value_t = 0.5)]
        score: f64,
        #[arg(long)]
        exit_after: Option<usize>,
    },
    Lm {
        #[arg(long)]
        model: std::path::PathBuf,
    },
}

fn serve(mut answer: impl FnMut(usize, Value) -> Option<Value>) {
    let stdin = std::io::stdin();
    let mut stdout = std::io::stdout().lock();
    for (i, line) in stdin.lock().lines().enumerate() {
        let Ok(line) = line else { return };
        let request: Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => {
                eprintln!("stub-provider: bad request: {e}");
                std::process::exit(3);
            }
        };
        let Some(response) = answer(i, request) else { std::process::exit(0) };
        if writeln!(stdout, "{response}").and_then(|_| stdout.flush()).is_err() {
            return;
        }
    }
}

fn main() {
    match Cli::parse().mode {
        Mode::Scorer { score, exit_after } => serve(|i, req| {
            if exit_after.is_some_and(|n| i >= n) {
                return None;
            }
            let n = req["pairs"].as_array().map_or(0, Vec::len);
            Some(json!({ "scores": vec![score; n] }))
        }),
        Mode::Lm { model } => {
            let text = std::fs::read_to_string(&model).unwrap_or_else(|e| {
                eprintln!("stub-provider: {}: {e}", model.display());
                std::process::exit(3);
            });
            let lm = ToyLm::from_json(&text).unwrap_or_else(|e| {
                eprintln!("stub-provider: {e}");
                std::process::exit(3);
            });
            serve(|_, req| match req["op"].as_str() {
                Some("info") => Some(json!({ "vocab_size": lm.vocab_size(), "eos": lm.eos_id() })),
                Some("logits") => {
                    let prefix: Vec<u32> = serde_json::from_value(req["prefix"].clone()).unwrap_or_default();
                    if prefix.is_empty() || prefix.iter().any(|&t| t as usize >= lm.vocab_size()) {
                        return Some(json!({ "error": "bad prefix" }));
                    }
                    Some(json!({ "logits": lm.next_logits(&prefix) }))
                }
                Some("repr") => {
                    let t = req["token"].as_u64().unwrap_or(u64::MAX);
                    if t as usize >= lm.vocab_size() {
                        return Some(json!({ "error": "bad token" }));
                    }
                    Some(json!({ "repr": lm.token_repr(t as u32) }))
                }
                _ => Some(json!({ "error": "unknown op" })),
            })
        }
    }
}
