// SPDX-License-Identifier: Apache-2.0

//! A [`LanguageModel`] served by a child process over line-delimited JSON.
//!
//! Requests, one per line on the child's stdin:
//! `{"op":"info"}`, `{"op":"logits","prefix":[ids]}`, `{"op":"repr","token":id}`.
//! Responses, one per line on its stdout:
//! `{"vocab_size":n,"eos":id}`, `{"logits":[...]}`, `{"repr":[...]}`.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::Deserialize;
use serde_json::json;
use thiserror::Error;

use super::LanguageModel;
use crate::tokenizer::TokenId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProcessLmError {
    #[error("model process unavailable: {0}")]
    Unavailable(String),
    #[error("malformed model response: {0}")]
    Malformed(String),
}

struct Channel {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl Channel {
    fn call(&mut self, request: &serde_json::Value) -> Result<String, ProcessLmError> {
        let unavailable = |e: std::io::Error| ProcessLmError::Unavailable(e.to_string());
        writeln!(self.stdin, "{request}").map_err(unavailable)?;
        self.stdin.flush().map_err(unavailable)?;
        let mut line = String::new();
        let n = self.stdout.read_line(&mut line).map_err(unavailable)?;
        if n == 0 {
            return Err(ProcessLmError::Unavailable("process closed its output".into()));
        }
        Ok(line)
    }
}

impl Drop for Channel {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub struct ProcessLm {
    channel: Mutex<Channel>,
    vocab_size: usize,
    eos_id: TokenId,
    error: Mutex<Option<ProcessLmError>>,
}

#[derive(Deserialize)]
struct Info {
    vocab_size: usize,
    eos: TokenId,
}

#[derive(Deserialize)]
struct Logits {
    logits: Vec<f64>,
}

#[derive(Deserialize)]
struct Repr {
    repr: Vec<f64>,
}

impl ProcessLm {
    pub fn spawn(program: &str, args: &[String]) -> Result<Self, ProcessLmError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| ProcessLmError::Unavailable(format!("{program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        let mut channel = Channel { child, stdin, stdout };
        let line = channel.call(&json!({"op": "info"}))?;
        let info: Info = serde_json::from_str(&line).map_err(|e| ProcessLmError::Malformed(e.to_string()))?;
        if info.vocab_size == 0 || info.eos as usize >= info.vocab_size {
            return Err(ProcessLmError::Malformed("eos outside vocabulary".into()));
        }
        Ok(Self { channel: Mutex::new(channel), vocab_size: info.vocab_size, eos_id: info.eos, error: Mutex::new(None) })
    }

    /// The first failure seen since the last call, if any. Once a query
    /// fails, logits force EOS so that decoding terminates.
    pub fn take_error(&self) -> Option<ProcessLmError> {
        self.error.lock().expect("error lock").take()
    }

    fn record(&self, e: ProcessLmError) {
        let mut slot = self.error.lock().expect("error lock");
        slot.get_or_insert(e);
    }

    fn failed(&self) -> bool {
        self.error.lock().expect("error lock").is_some()
    }

    fn forced_eos(&self) -> Vec<f64> {
        let mut v = vec![f64::NEG_INFINITY; self.vocab_size];
        v[self.eos_id as usize] = 0.0;
        v
    }
}

impl LanguageModel for ProcessLm {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn eos_id(&self) -> TokenId {
        self.eos_id
    }

    fn next_logits(&self, prefix: &[TokenId]) -> Vec<f64> {
        if self.failed() {
            return self.forced_eos();
        }
        let res = self
            .channel
            .lock()
            .expect("channel lock")
            .call(&json!({"op": "logits", "prefix": prefix}))
            .and_then(|line| serde_json::from_str::<Logits>(&line).map_err(|e| ProcessLmError::Malformed(e.to_string())));
        match res {
            Ok(l) if l.logits.len() == self.vocab_size => l.logits,
            Ok(l) => {
                self.record(ProcessLmError::Malformed(format!("{} logits for vocabulary {}", l.logits.len(), self.vocab_size)));
                self.forced_eos()
            }
            Err(e) => {
                self.record(e);
                self.forced_eos()
            }
        }
    }

    fn token_repr(&self, token: TokenId) -> Vec<f64> {
        if self.failed() {
            return vec![0.0];
        }
        let res = self
            .channel
            .lock()
            .expect("channel lock")
            .call(&json!({"op": "repr", "token": token}))
            .and_then(|line| serde_json::from_str::<Repr>(&line).map_err(|e| ProcessLmError::Malformed(e.to_string())));
        match res {
            Ok(r) => r.repr,
            Err(e) => {
                self.record(e);
                vec![0.0]
            }
        }
    }
}
