// SPDX-License-Identifier: Apache-2.0

//! The `dischargekit` command line.
//!
//! Exit status: 0 on success, 1 for usage and input errors, 2 for internal
//! and I/O errors (including unwritable outputs).

use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::fmt::Display;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::budget::{budget_report, TokenBudgetPolicy};
use crate::context::{
    build_context, build_training_manifest, emit_dataset, gold_target, render_prompt, ContextPart, ContextVariant,
    DatasetBudgets, DatasetMode, ManifestOverrides, TargetKind,
};
use crate::corpus::{parse_corpus, read_corpus, CorpusRecord, SkipEntry};
use crate::decode::{
    beam_decode, contrastive_decode, ensemble_greedy_decode, greedy_decode, nucleus_decode, Algorithm, DecodeConfig,
    DecodeError, DecodeTrace, LanguageModel, ProcessLm, StopReason, ToyLm,
};
use crate::merge::{
    apply_delta, load_tensor_map, lora_merge, task_vector, ties_merge, write_tensor_map, LoraAdapter, NamedTensorMap,
    TiesConfig,
};
use crate::metrics::{evaluate_run, format_fixed, render_table, ExternalScorer, Metric, MetricReport, Pair, ScoreProvider};
use crate::note::{HeaderLexicon, SectionSpan};
use crate::pipeline::{atomic_write, file_digest, write_run_manifest, Config, ConfigError, InputDigest, RunManifest};
use crate::tokenizer::{TokenId, Tokenizer};

/// Environment variable naming a model process for `decode`.
pub const LM_ENV: &str = "DISCHARGEKIT_LM";

#[derive(Debug)]
pub enum CliError {
    /// Bad usage or bad input data; exit 1.
    Input(String),
    /// Failures of the tool or its environment; exit 2.
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Internal(_) => 2,
        }
    }
}

impl Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) | CliError::Internal(m) => f.write_str(m),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Input(e.to_string())
    }
}

fn input(e: impl Display) -> CliError {
    CliError::Input(e.to_string())
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "dischargekit", version, about = "Discharge-summary generation and evaluation toolkit")]
struct Cli {
    /// Random seed for sampling decoders.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Key-value config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct CorpusArgs {
    /// Line-delimited JSON corpus.
    #[arg(long)]
    corpus: PathBuf,
    /// Header lexicon file (BHC:/DI:/STOP: lines).
    #[arg(long)]
    lexicon: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct OutputArg {
    /// Output file; a run manifest is written next to it. Defaults to stdout.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Segment notes and report their sections and skipped records.
    Parse {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        out: OutputArg,
    },
    /// Build input contexts as JSONL.
    Contexts {
        #[command(flatten)]
        corpus: CorpusArgs,
        /// bhc or di; both when omitted.
        #[arg(long)]
        target: Option<TargetKind>,
        /// base, base-rad, long-di or rad-only.
        #[arg(long)]
        variant: Option<ContextVariant>,
        #[command(flatten)]
        out: OutputArg,
    },
    /// Emit a fine-tuning dataset as JSONL.
    Dataset {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        variant: Option<ContextVariant>,
        /// specialized or unified.
        #[arg(long)]
        mode: Option<DatasetMode>,
        #[arg(long)]
        target: Option<TargetKind>,
        /// Tokenizer JSON used for budgets (whitespace tokenizer otherwise).
        #[arg(long)]
        tokenizer: Option<PathBuf>,
        #[arg(long)]
        context_budget: Option<usize>,
        #[arg(long)]
        target_budget: Option<usize>,
        #[command(flatten)]
        out: OutputArg,
    },
    /// Token-count distributions and percentile budgets.
    Budget {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        tokenizer: Option<PathBuf>,
        #[arg(long)]
        percentile: Option<f64>,
        #[arg(long)]
        multiple: Option<usize>,
        #[command(flatten)]
        out: OutputArg,
    },
    /// Training manifest for an external fine-tuning run.
    Manifest {
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        lora_rank: Option<i64>,
        #[arg(long)]
        lora_alpha: Option<i64>,
        #[arg(long)]
        lora_target: Option<String>,
        #[arg(long)]
        batch_size: Option<i64>,
        #[arg(long)]
        epochs: Option<i64>,
        #[arg(long)]
        warmup_ratio: Option<f64>,
        #[arg(long)]
        max_input_tokens: Option<i64>,
        #[arg(long)]
        max_output_tokens: Option<i64>,
        #[command(flatten)]
        out: OutputArg,
    },
    /// Decode with a table model or a model process.
    Decode(DecodeArgs),
    /// Merge a LoRA adapter into base weights.
    MergeLora {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        adapter: PathBuf,
        #[arg(long)]
        alpha: Option<u32>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// TIES-merge task vectors (or fine-tuned weights with --base).
    MergeTies {
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        /// Base weights: inputs become fine-tuned weights and the merged task
        /// vector is added back onto the base.
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(long)]
        density: Option<f64>,
        /// Comma-separated per-input weights.
        #[arg(long)]
        weights: Option<String>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Score hypotheses against references and print the leaderboard row.
    Eval(EvalArgs),
    /// Render a leaderboard table from eval reports or score files.
    Report {
        /// `name=path` or `path`; the row name defaults to the file stem.
        #[arg(required = true)]
        rows: Vec<String>,
        #[arg(long)]
        decimals: Option<usize>,
        #[command(flatten)]
        out: OutputArg,
    },
}

#[derive(Args, Debug)]
struct DecodeArgs {
    /// greedy, beam, nucleus, contrastive or ensemble.
    #[arg(long)]
    algo: Option<Algorithm>,
    /// Table model JSON.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Model process command line (program and arguments).
    #[arg(long)]
    model_cmd: Option<String>,
    /// Second table model for ensemble decoding.
    #[arg(long)]
    model_b: Option<PathBuf>,
    /// Second model process for ensemble decoding.
    #[arg(long)]
    model_b_cmd: Option<String>,
    #[arg(long)]
    tokenizer: Option<PathBuf>,
    /// Contexts JSONL (from `contexts`).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Comma-separated prefix token ids, instead of --input.
    #[arg(long)]
    prefix: Option<String>,
    #[arg(long)]
    max_new_tokens: Option<usize>,
    #[arg(long)]
    beam_width: Option<usize>,
    #[arg(long)]
    length_penalty: Option<f64>,
    #[arg(long)]
    top_p: Option<f64>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[command(flatten)]
    out: OutputArg,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Decode output JSONL.
    #[arg(long)]
    hyps: Option<PathBuf>,
    /// Reference JSONL with note_id, target_kind and text (or completion).
    #[arg(long)]
    refs: Option<PathBuf>,
    /// Corpus to take gold references from, instead of --refs.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// JSON object of combined per-metric values on the x100 scale.
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Comma-separated metrics to compute (default: all eight).
    #[arg(long)]
    metrics: Option<String>,
    /// Scorer process command line for model-based metrics.
    #[arg(long)]
    scorer: Option<String>,
    /// Row label in the printed table.
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    decimals: Option<usize>,
    #[command(flatten)]
    out: OutputArg,
}

/// Bookkeeping for one subcommand invocation.
struct Run {
    command: &'static str,
    args: Vec<String>,
    config: Config,
    config_given: bool,
    settings: BTreeMap<String, String>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    skipped: Vec<SkipEntry>,
    started: Instant,
}

impl Run {
    fn setting<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>, default: T) -> CliResult<T>
    where
        T::Err: Display,
    {
        let v = self.config.resolve(key, flag, default)?;
        self.settings.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    fn setting_opt<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> CliResult<Option<T>>
    where
        T::Err: Display,
    {
        let v = self.config.resolve_opt(key, flag)?;
        if let Some(v) = &v {
            self.settings.insert(key.to_string(), v.to_string());
        }
        Ok(v)
    }

    fn path_setting(&mut self, key: &str, flag: Option<PathBuf>) -> CliResult<Option<PathBuf>> {
        let v = flag.or_else(|| self.config.raw(key).map(PathBuf::from));
        if let Some(p) = &v {
            self.settings.insert(key.to_string(), p.display().to_string());
        }
        Ok(v)
    }

    fn read(&mut self, path: &Path) -> CliResult<Vec<u8>> {
        let bytes = fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        self.inputs.push(path.to_path_buf());
        Ok(bytes)
    }

    fn read_string(&mut self, path: &Path) -> CliResult<String> {
        String::from_utf8(self.read(path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }

    fn skip(&mut self, entries: impl IntoIterator<Item = SkipEntry>) {
        for s in entries {
            eprintln!("skipped {} [{}]: {}", s.note_id, s.stage, s.reason);
            self.skipped.push(s);
        }
    }

    /// Writes `bytes` to `path` atomically, or to stdout without a path.
    fn emit(&mut self, path: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
        match path {
            Some(p) => {
                atomic_write(p, bytes).map_err(|e| CliError::Internal(format!("{}: {e}", p.display())))?;
                self.outputs.push(p.to_path_buf());
            }
            None => {
                let mut out = std::io::stdout().lock();
                out.write_all(bytes).and_then(|_| out.flush()).map_err(|e| CliError::Internal(e.to_string()))?;
            }
        }
        Ok(())
    }

    fn finish(self) -> CliResult<()> {
        let Some(primary) = self.outputs.first().cloned() else { return Ok(()) };
        let inputs = self
            .inputs
            .iter()
            .map(|p| {
                file_digest(p)
                    .map(|sha256| InputDigest { path: p.display().to_string(), sha256 })
                    .map_err(|e| CliError::Internal(format!("{}: {e}", p.display())))
            })
            .collect::<CliResult<Vec<_>>>()?;
        let manifest = RunManifest {
            command: self.command.to_string(),
            args: self.args,
            config_file: self.config_given.then(|| self.config.entries().clone()),
            settings: self.settings,
            inputs,
            outputs: self.outputs.iter().map(|p| p.display().to_string()).collect(),
            skipped: self.skipped,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            duration_secs: self.started.elapsed().as_secs_f64(),
        };
        write_run_manifest(&manifest, &primary).map_err(|e| CliError::Internal(format!("run manifest: {e}")))?;
        Ok(())
    }
}

fn jsonl<T: Serialize>(rows: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r).expect("rows serialise");
        out.push(b'\n');
    }
    out
}

fn pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("value serialises");
    out.push(b'\n');
    out
}

fn load_lexicon(run: &mut Run, flag: Option<PathBuf>) -> CliResult<HeaderLexicon> {
    match run.path_setting("lexicon", flag)? {
        None => Ok(HeaderLexicon::default()),
        Some(p) => run.read_string(&p)?.parse().map_err(|e| CliError::Input(format!("{}: {e}", p.display()))),
    }
}

fn load_corpus(run: &mut Run, args: &CorpusArgs) -> CliResult<(Vec<CorpusRecord>, HeaderLexicon)> {
    let bytes = run.read(&args.corpus)?;
    let records = read_corpus(BufReader::new(bytes.as_slice())).map_err(|e| CliError::Input(format!("{}: {e}", args.corpus.display())))?;
    if records.is_empty() {
        return Err(CliError::Input(format!("{}: no records", args.corpus.display())));
    }
    let lexicon = load_lexicon(run, args.lexicon.clone())?;
    Ok((records, lexicon))
}

fn load_tokenizer(run: &mut Run, flag: Option<PathBuf>) -> CliResult<Option<Tokenizer>> {
    match run.path_setting("tokenizer", flag)? {
        None => Ok(None),
        Some(p) => {
            let text = run.read_string(&p)?;
            Tokenizer::from_json(&text).map(Some).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))
        }
    }
}

#[derive(Serialize)]
struct ParsedSummary<'a> {
    note_id: &'a str,
    sections: &'a [SectionSpan],
    radiology_reports: usize,
}

fn cmd_parse(run: &mut Run, corpus: CorpusArgs, out: OutputArg) -> CliResult<()> {
    let (records, lexicon) = load_corpus(run, &corpus)?;
    let (notes, skipped) = parse_corpus(&records, &lexicon);
    run.skip(skipped.clone());
    let summaries: Vec<ParsedSummary> = notes
        .iter()
        .map(|n| ParsedSummary { note_id: &n.note_id, sections: &n.sections, radiology_reports: n.radiology_reports.len() })
        .collect();
    let doc = serde_json::json!({ "notes": summaries, "skipped": skipped });
    run.emit(out.output.as_deref(), &pretty(&doc))
}

#[derive(Debug, Serialize, Deserialize)]
struct ContextLine {
    note_id: String,
    target_kind: TargetKind,
    variant: ContextVariant,
    parts: Vec<ContextPart>,
    text: String,
    prompt: String,
}

fn cmd_contexts(
    run: &mut Run,
    corpus: CorpusArgs,
    target: Option<TargetKind>,
    variant: Option<ContextVariant>,
    out: OutputArg,
) -> CliResult<()> {
    let (records, lexicon) = load_corpus(run, &corpus)?;
    let target = run.setting_opt("target", target.map(Target))?.map(|t| t.0);
    let variant = run.setting("variant", variant.map(Variant), Variant(ContextVariant::Base))?.0;
    let targets: Vec<TargetKind> = target.map_or(TargetKind::ALL.to_vec(), |t| vec![t]);
    if target == Some(TargetKind::Bhc) && variant == ContextVariant::LongDi {
        return Err(input("the long-di context only applies to the DI target"));
    }
    let (notes, skipped) = parse_corpus(&records, &lexicon);
    run.skip(skipped);
    let built: Vec<Vec<Result<ContextLine, SkipEntry>>> = notes
        .par_iter()
        .map(|note| {
            targets
                .iter()
                .map(|&t| {
                    build_context(note, t, variant.for_target(t))
                        .map(|ctx| ContextLine {
                            prompt: render_prompt(&ctx, None),
                            note_id: ctx.note_id,
                            target_kind: ctx.target,
                            variant: ctx.variant,
                            parts: ctx.parts,
                            text: ctx.text,
                        })
                        .map_err(|e| SkipEntry::new(note.note_id.clone(), &format!("context.{}", t.key()), e))
                })
                .collect()
        })
        .collect();
    let mut lines = Vec::new();
    let mut skips = Vec::new();
    for r in built.into_iter().flatten() {
        match r {
            Ok(l) => lines.push(l),
            Err(s) => skips.push(s),
        }
    }
    run.skip(skips);
    run.emit(out.output.as_deref(), &jsonl(&lines))
}

#[allow(clippy::too_many_arguments)]
fn cmd_dataset(
    run: &mut Run,
    corpus: CorpusArgs,
    variant: Option<ContextVariant>,
    mode: Option<DatasetMode>,
    target: Option<TargetKind>,
    tokenizer: Option<PathBuf>,
    context_budget: Option<usize>,
    target_budget: Option<usize>,
    out: OutputArg,
) -> CliResult<()> {
    let (records, lexicon) = load_corpus(run, &corpus)?;
    let variant = run.setting("variant", variant.map(Variant), Variant(ContextVariant::Base))?.0;
    let mode = run.setting("mode", mode.map(Mode), Mode(DatasetMode::Specialized))?.0;
    let target = run.setting_opt("target", target.map(Target))?.map(|t| t.0);
    let context_budget = run.setting_opt("context_budget", context_budget)?;
    let target_budget = run.setting_opt("target_budget", target_budget)?;
    let tokenizer = load_tokenizer(run, tokenizer)?.unwrap_or_else(Tokenizer::whitespace);
    let budgets = DatasetBudgets { tokenizer: &tokenizer, context: context_budget, target: target_budget };
    let use_budgets = context_budget.is_some() || target_budget.is_some();
    let dataset = emit_dataset(&records, &lexicon, variant, mode, target, use_budgets.then_some(&budgets)).map_err(input)?;
    run.skip(dataset.skipped.clone());
    run.emit(out.output.as_deref(), &jsonl(&dataset.records))
}

fn cmd_budget(
    run: &mut Run,
    corpus: CorpusArgs,
    tokenizer: Option<PathBuf>,
    percentile: Option<f64>,
    multiple: Option<usize>,
    out: OutputArg,
) -> CliResult<()> {
    let (records, lexicon) = load_corpus(run, &corpus)?;
    let d = TokenBudgetPolicy::default();
    let percentile = run.setting("percentile", percentile, d.percentile)?;
    let multiple = run.setting("multiple", multiple, d.multiple)?;
    let policy = TokenBudgetPolicy::new(percentile, multiple).map_err(input)?;
    let tokenizer = load_tokenizer(run, tokenizer)?.unwrap_or_else(Tokenizer::whitespace);
    let (notes, skipped) = parse_corpus(&records, &lexicon);
    run.skip(skipped.clone());
    let mut report = budget_report(&notes, &tokenizer, &policy);
    report.skipped = skipped;
    run.emit(out.output.as_deref(), &pretty(&report))
}

fn cmd_merge_lora(run: &mut Run, base: PathBuf, adapter: PathBuf, alpha: Option<u32>, output: PathBuf) -> CliResult<()> {
    let alpha = run.setting("lora_alpha", alpha, 16)?;
    let base_map = load_map(run, &base)?;
    let adapter_map = load_map(run, &adapter)?;
    let adapter = LoraAdapter::from_tensor_map(&adapter_map, alpha).map_err(input)?;
    let merged = lora_merge(&base_map, &adapter).map_err(input)?;
    emit_map(run, &output, &merged)
}

fn cmd_merge_ties(
    run: &mut Run,
    inputs: Vec<PathBuf>,
    base: Option<PathBuf>,
    density: Option<f64>,
    weights: Option<String>,
    lambda: Option<f64>,
    output: PathBuf,
) -> CliResult<()> {
    let d = TiesConfig::default();
    let density = run.setting("density", density, d.density)?;
    let lambda = run.setting("lambda", lambda, d.lambda)?;
    let weights = run
        .setting_opt("weights", weights)?
        .map(|w| {
            w.split(',')
                .map(|x| x.trim().parse::<f64>().map_err(|e| CliError::Input(format!("weights: {x:?}: {e}"))))
                .collect::<CliResult<Vec<f64>>>()
        })
        .transpose()?;
    let cfg = TiesConfig { density, weights, lambda };
    let maps = inputs.iter().map(|p| load_map(run, p)).collect::<CliResult<Vec<_>>>()?;
    let merged = match base {
        None => ties_merge(&maps, &cfg).map_err(input)?,
        Some(b) => {
            let base_map = load_map(run, &b)?;
            let deltas = maps.iter().map(|m| task_vector(&base_map, m)).collect::<Result<Vec<_>, _>>().map_err(input)?;
            let delta = ties_merge(&deltas, &cfg).map_err(input)?;
            apply_delta(&base_map, &delta).map_err(input)?
        }
    };
    emit_map(run, &output, &merged)
}

fn load_map(run: &mut Run, path: &Path) -> CliResult<NamedTensorMap> {
    let m = load_tensor_map(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    run.inputs.push(path.to_path_buf());
    Ok(m)
}

fn emit_map(run: &mut Run, path: &Path, map: &NamedTensorMap) -> CliResult<()> {
    let mut bytes = Vec::new();
    write_tensor_map(map, &mut bytes).map_err(|e| CliError::Internal(e.to_string()))?;
    run.emit(Some(path), &bytes)
}

/// A model loaded for `decode`.
enum Model {
    Table(ToyLm),
    Process(ProcessLm),
}

impl LanguageModel for Model {
    fn vocab_size(&self) -> usize {
        match self {
            Model::Table(m) => m.vocab_size(),
            Model::Process(m) => m.vocab_size(),
        }
    }
    fn eos_id(&self) -> TokenId {
        match self {
            Model::Table(m) => m.eos_id(),
            Model::Process(m) => m.eos_id(),
        }
    }
    fn next_logits(&self, prefix: &[TokenId]) -> Vec<f64> {
        match self {
            Model::Table(m) => m.next_logits(prefix),
            Model::Process(m) => m.next_logits(prefix),
        }
    }
    fn token_repr(&self, token: TokenId) -> Vec<f64> {
        match self {
            Model::Table(m) => m.token_repr(token),
            Model::Process(m) => m.token_repr(token),
        }
    }
}

impl Model {
    fn check(&self) -> CliResult<()> {
        match self {
            Model::Process(m) => m.take_error().map_or(Ok(()), |e| Err(CliError::Internal(e.to_string()))),
            Model::Table(_) => Ok(()),
        }
    }
}

fn spawn_process_model(cmd: &str) -> CliResult<Model> {
    let mut parts = cmd.split_whitespace().map(String::from);
    let program = parts.next().ok_or_else(|| input("empty model command"))?;
    let args: Vec<String> = parts.collect();
    ProcessLm::spawn(&program, &args).map(Model::Process).map_err(|e| CliError::Internal(e.to_string()))
}

fn load_model(run: &mut Run, key: &str, path: Option<PathBuf>, cmd: Option<String>, env: Option<&str>) -> CliResult<Option<Model>> {
    if let Some(p) = run.path_setting(key, path)? {
        let text = run.read_string(&p)?;
        return ToyLm::from_json(&text).map(|m| Some(Model::Table(m))).map_err(|e| CliError::Input(format!("{}: {e}", p.display())));
    }
    let cmd_key = format!("{key}_cmd");
    let cmd = cmd.or_else(|| run.config.raw(&cmd_key).map(String::from)).or_else(|| env.and_then(|v| std::env::var(v).ok()));
    match cmd {
        Some(c) => {
            run.settings.insert(cmd_key, c.clone());
            spawn_process_model(&c).map(Some)
        }
        None => Ok(None),
    }
}

#[derive(Debug, Serialize)]
struct DecodeLine {
    note_id: String,
    target_kind: Option<TargetKind>,
    algorithm: Algorithm,
    tokens: Vec<TokenId>,
    text: String,
    stop_reason: StopReason,
}

#[derive(Debug, Deserialize)]
struct DecodeInput {
    note_id: String,
    #[serde(default)]
    target_kind: Option<TargetKind>,
    #[serde(default)]
    prompt: Option<String>,
    #[serde(default)]
    text: Option<String>,
}

fn decode_one(algo: Algorithm, a: &Model, b: Option<&Model>, prefix: &[TokenId], cfg: &DecodeConfig) -> Result<DecodeTrace, DecodeError> {
    match algo {
        Algorithm::Greedy => greedy_decode(a, prefix, cfg),
        Algorithm::Beam => beam_decode(a, prefix, cfg),
        Algorithm::Nucleus => nucleus_decode(a, prefix, cfg),
        Algorithm::Contrastive => contrastive_decode(a, prefix, cfg),
        Algorithm::Ensemble => ensemble_greedy_decode(a, b.expect("second model checked"), prefix, cfg),
    }
}

fn cmd_decode(run: &mut Run, args: DecodeArgs, seed: Option<u64>) -> CliResult<()> {
    let algo = run.setting("algo", args.algo.map(Algo), Algo(Algorithm::Greedy))?.0;
    let d = DecodeConfig::default();
    let cfg = DecodeConfig {
        max_new_tokens: run.setting("max_new_tokens", args.max_new_tokens, d.max_new_tokens)?,
        beam_width: run.setting("beam_width", args.beam_width, d.beam_width)?,
        nucleus_p: run.setting("top_p", args.top_p, d.nucleus_p)?,
        contrastive_k: run.setting("top_k", args.top_k, d.contrastive_k)?,
        contrastive_alpha: run.setting("alpha", args.alpha, d.contrastive_alpha)?,
        seed: run.setting("seed", seed, d.seed)?,
        length_penalty: run.setting("length_penalty", args.length_penalty, d.length_penalty)?,
    };
    cfg.validate().map_err(input)?;
    let tokenizer = load_tokenizer(run, args.tokenizer)?;
    let model = load_model(run, "model", args.model, args.model_cmd, Some(LM_ENV))?
        .ok_or_else(|| input(format!("decode needs --model or --model-cmd (or {LM_ENV})")))?;
    let model_b = load_model(run, "model_b", args.model_b, args.model_b_cmd, None)?;
    if algo == Algorithm::Ensemble && model_b.is_none() {
        return Err(input("ensemble decoding needs --model-b or --model-b-cmd"));
    }
    if let Some(t) = &tokenizer {
        if t.vocab_size() > model.vocab_size() {
            return Err(input(format!(
                "tokenizer vocabulary ({}) is larger than the model's ({})",
                t.vocab_size(),
                model.vocab_size()
            )));
        }
    }

    // (note_id, target, prefix)
    let mut jobs: Vec<(String, Option<TargetKind>, Vec<TokenId>)> = Vec::new();
    match (run.path_setting("input", args.input)?, args.prefix) {
        (Some(_), Some(_)) => return Err(input("--input and --prefix are mutually exclusive")),
        (None, None) => return Err(input("decode needs --input or --prefix")),
        (None, Some(p)) => {
            let ids = p
                .split(',')
                .map(|x| x.trim().parse::<TokenId>().map_err(|e| CliError::Input(format!("prefix {x:?}: {e}"))))
                .collect::<CliResult<Vec<_>>>()?;
            jobs.push(("prefix".to_string(), None, ids));
        }
        (Some(path), None) => {
            let tok = tokenizer.as_ref().ok_or_else(|| input("--input needs --tokenizer to encode prompts"))?;
            let text = run.read_string(&path)?;
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let rec: DecodeInput =
                    serde_json::from_str(line).map_err(|e| CliError::Input(format!("{} line {}: {e}", path.display(), i + 1)))?;
                let source = rec.prompt.or(rec.text).ok_or_else(|| {
                    CliError::Input(format!("{} line {}: note {} has neither prompt nor text", path.display(), i + 1, rec.note_id))
                })?;
                jobs.push((rec.note_id, rec.target_kind, tok.encode(&source)));
            }
            if jobs.is_empty() {
                return Err(CliError::Input(format!("{}: no records", path.display())));
            }
        }
    }
    let vocab = model.vocab_size();
    if let Some((id, _, p)) = jobs.iter().find(|(_, _, p)| p.iter().any(|&t| t as usize >= vocab)) {
        let bad = p.iter().find(|&&t| t as usize >= vocab).expect("found above");
        return Err(CliError::Input(format!("note {id}: token id {bad} outside model vocabulary of {vocab}")));
    }

    // each record samples from its own stream so output does not depend on scheduling
    let results: Vec<Result<DecodeLine, SkipEntry>> = jobs
        .par_iter()
        .enumerate()
        .map(|(i, (note_id, target, prefix))| {
            let rec_cfg = DecodeConfig { seed: cfg.seed.wrapping_add(i as u64), ..cfg.clone() };
            decode_one(algo, &model, model_b.as_ref(), prefix, &rec_cfg)
                .map(|trace| DecodeLine {
                    note_id: note_id.clone(),
                    target_kind: *target,
                    algorithm: algo,
                    text: match &tokenizer {
                        Some(t) => t.decode(&trace.tokens),
                        None => trace.tokens.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" "),
                    },
                    tokens: trace.tokens,
                    stop_reason: trace.stop_reason,
                })
                .map_err(|e| SkipEntry::new(note_id.clone(), "decode", e))
        })
        .collect();
    model.check()?;
    if let Some(b) = &model_b {
        b.check()?;
    }
    let mut lines = Vec::new();
    let mut skips = Vec::new();
    for r in results {
        match r {
            Ok(l) => lines.push(l),
            Err(s) => skips.push(s),
        }
    }
    if lines.is_empty() {
        let reason = skips.first().map(|s| format!("note {}: {}", s.note_id, s.reason)).unwrap_or_default();
        return Err(CliError::Input(format!("nothing decoded; {reason}")));
    }
    run.skip(skips);
    run.emit(args.out.output.as_deref(), &jsonl(&lines))
}

#[derive(Debug, Deserialize)]
struct HypLine {
    note_id: String,
    target_kind: Option<TargetKind>,
    text: String,
}

#[derive(Debug, Deserialize)]
struct RefLine {
    note_id: String,
    target_kind: TargetKind,
    #[serde(alias = "completion")]
    text: String,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(run: &mut Run, path: &Path) -> CliResult<Vec<T>> {
    let text = run.read_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| CliError::Input(format!("{} line {}: {e}", path.display(), i + 1))))
        .collect()
}

fn parse_metric_list(s: &str) -> CliResult<Vec<Metric>> {
    s.split(',').filter(|x| !x.trim().is_empty()).map(|x| x.trim().parse::<Metric>().map_err(input)).collect()
}

/// Reads a score file: an object of metric name to combined value (x100).
fn read_scores(run: &mut Run, path: &Path) -> CliResult<MetricReport> {
    let text = run.read_string(path)?;
    let raw: BTreeMap<String, f64> =
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let mut combined = BTreeMap::new();
    for (k, v) in raw {
        if k.eq_ignore_ascii_case("overall") {
            continue;
        }
        let m: Metric = k.parse().map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        if !(0.0..=100.0).contains(&v) {
            return Err(CliError::Input(format!("{}: {m} value {v} is not in [0, 100]", path.display())));
        }
        combined.insert(m, v / 100.0);
    }
    Ok(MetricReport::from_combined(combined))
}

fn cmd_eval(run: &mut Run, args: EvalArgs) -> CliResult<()> {
    let decimals = run.setting("decimals", args.decimals, 2)?;
    let name = run.setting("name", args.name, "run".to_string())?;
    let report = if let Some(scores) = run.path_setting("scores", args.scores)? {
        read_scores(run, &scores)?
    } else {
        let hyps_path = run.path_setting("hyps", args.hyps)?.ok_or_else(|| input("eval needs --hyps (or --scores)"))?;
        let hyps: Vec<HypLine> = read_jsonl(run, &hyps_path)?;
        let refs: Vec<RefLine> = match (run.path_setting("refs", args.refs)?, args.corpus) {
            (Some(p), _) => read_jsonl(run, &p)?,
            (None, Some(c)) => {
                let (records, lexicon) = load_corpus(run, &CorpusArgs { corpus: c, lexicon: args.lexicon })?;
                let (notes, skipped) = parse_corpus(&records, &lexicon);
                run.skip(skipped);
                notes
                    .iter()
                    .flat_map(|n| {
                        TargetKind::ALL.map(|t| RefLine { note_id: n.note_id.clone(), target_kind: t, text: gold_target(n, t).to_string() })
                    })
                    .collect()
            }
            (None, None) => return Err(input("eval needs --refs or --corpus")),
        };
        let mut by_key: HashMap<(String, TargetKind), String> = HashMap::new();
        for h in hyps {
            let t = h.target_kind.ok_or_else(|| CliError::Input(format!("hypothesis for note {} has no target_kind", h.note_id)))?;
            if by_key.insert((h.note_id.clone(), t), h.text).is_some() {
                return Err(CliError::Input(format!("duplicate {t} hypothesis for note {}", h.note_id)));
            }
        }
        let mut bhc = Vec::new();
        let mut di = Vec::new();
        for r in &refs {
            let hyp = by_key.remove(&(r.note_id.clone(), r.target_kind)).unwrap_or_else(|| {
                eprintln!("note {}: no {} hypothesis, scoring an empty one", r.note_id, r.target_kind);
                String::new()
            });
            let pair = Pair::new(hyp, r.text.clone());
            match r.target_kind {
                TargetKind::Bhc => bhc.push(pair),
                TargetKind::Di => di.push(pair),
            }
        }
        if let Some(((note, t), _)) = by_key.into_iter().min_by(|a, b| a.0.cmp(&b.0)) {
            return Err(CliError::Input(format!("note {note}: {t} hypothesis has no reference")));
        }
        let metrics = match run.setting_opt("metrics", args.metrics)? {
            Some(s) => parse_metric_list(&s)?,
            None => Metric::ALL.to_vec(),
        };
        let scorer = match args.scorer.or_else(|| run.config.raw("scorer").map(String::from)) {
            Some(cmd) => {
                run.settings.insert("scorer".into(), cmd.clone());
                let mut parts = cmd.split_whitespace().map(String::from);
                let program = parts.next().ok_or_else(|| input("empty scorer command"))?;
                Some(ExternalScorer::new(program, parts.collect()))
            }
            None => ExternalScorer::from_env(),
        };
        let needs_scorer = metrics.iter().any(|m| m.is_external());
        let provider = scorer.as_ref().filter(|_| needs_scorer).map(|s| s as &dyn ScoreProvider);
        evaluate_run(&bhc, &di, &metrics, provider).map_err(|e| match e {
            crate::metrics::EvalError::Scorer { .. } => CliError::Internal(e.to_string()),
            _ => input(e),
        })?
    };
    if !report.missing.is_empty() {
        let names: Vec<&str> = report.missing.iter().map(|m| m.name()).collect();
        eprintln!("overall undefined: missing {}", names.join(", "));
    }
    let table = render_table(&[(name, report.clone())], decimals);
    let overall = report.overall.map_or_else(|| "undefined".to_string(), |v| format_fixed(v * 100.0, decimals));
    print!("{table}");
    println!("Overall: {overall}");
    if let Some(p) = &args.out.output {
        run.emit(Some(p), &pretty(&report))?;
    }
    Ok(())
}

fn cmd_report(run: &mut Run, rows: Vec<String>, decimals: Option<usize>, out: OutputArg) -> CliResult<()> {
    let decimals = run.setting("decimals", decimals, 2)?;
    let mut table_rows = Vec::new();
    for spec in rows {
        let (name, path) = match spec.split_once('=') {
            Some((n, p)) => (n.to_string(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(&spec);
                let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or(spec.clone());
                (stem, p)
            }
        };
        let text = run.read_string(&path)?;
        let report = match serde_json::from_str::<MetricReport>(&text) {
            Ok(r) => r,
            Err(_) => {
                run.inputs.pop();
                read_scores(run, &path)?
            }
        };
        table_rows.push((name, report));
    }
    let table = render_table(&table_rows, decimals);
    run.emit(out.output.as_deref(), table.as_bytes())
}

// FromStr/Display wrappers so enum settings can come from the config file.
macro_rules! setting_enum {
    ($name:ident, $inner:ty, $show:expr) => {
        #[derive(Debug, Clone, Copy)]
        struct $name($inner);
        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                s.parse().map($name)
            }
        }
        impl Display for $name {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                let show: fn(&$inner) -> String = $show;
                f.write_str(&show(&self.0))
            }
        }
    };
}

setting_enum!(Target, TargetKind, |t| t.key().to_string());
setting_enum!(Variant, ContextVariant, |v| format!("{v:?}"));
setting_enum!(Mode, DatasetMode, |m| format!("{m:?}"));
setting_enum!(Algo, Algorithm, |a| format!("{a:?}").to_ascii_lowercase());

fn dispatch(cli: Cli, args: Vec<String>) -> CliResult<()> {
    let config_given = cli.config.is_some();
    let config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let command = match &cli.command {
        Command::Parse { .. } => "parse",
        Command::Contexts { .. } => "contexts",
        Command::Dataset { .. } => "dataset",
        Command::Budget { .. } => "budget",
        Command::Manifest { .. } => "manifest",
        Command::Decode(_) => "decode",
        Command::MergeLora { .. } => "merge-lora",
        Command::MergeTies { .. } => "merge-ties",
        Command::Eval(_) => "eval",
        Command::Report { .. } => "report",
    };
    let mut run = Run {
        command,
        args,
        config,
        config_given,
        settings: BTreeMap::new(),
        inputs: Vec::new(),
        outputs: Vec::new(),
        skipped: Vec::new(),
        started: Instant::now(),
    };
    if let Some(p) = &cli.config {
        run.inputs.push(p.clone());
    }
    let jobs = run.setting_opt("jobs", cli.jobs)?;
    if let Some(j) = jobs {
        if j == 0 {
            return Err(input("--jobs must be at least 1"));
        }
        // the global pool can only be configured once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    match cli.command {
        Command::Parse { corpus, out } => cmd_parse(&mut run, corpus, out)?,
        Command::Contexts { corpus, target, variant, out } => cmd_contexts(&mut run, corpus, target, variant, out)?,
        Command::Dataset { corpus, variant, mode, target, tokenizer, context_budget, target_budget, out } => {
            cmd_dataset(&mut run, corpus, variant, mode, target, tokenizer, context_budget, target_budget, out)?
        }
        Command::Budget { corpus, tokenizer, percentile, multiple, out } => {
            cmd_budget(&mut run, corpus, tokenizer, percentile, multiple, out)?
        }
        Command::Manifest {
            learning_rate,
            lora_rank,
            lora_alpha,
            lora_target,
            batch_size,
            epochs,
            warmup_ratio,
            max_input_tokens,
            max_output_tokens,
            out,
        } => {
            let overrides = ManifestOverrides {
                learning_rate: run.setting_opt("learning_rate", learning_rate)?,
                lora_rank: run.setting_opt("lora_rank", lora_rank)?,
                lora_alpha: run.setting_opt("lora_alpha", lora_alpha)?,
                lora_target: run.setting_opt("lora_target", lora_target)?,
                batch_size: run.setting_opt("batch_size", batch_size)?,
                epochs: run.setting_opt("epochs", epochs)?,
                warmup_ratio: run.setting_opt("warmup_ratio", warmup_ratio)?,
                max_input_tokens: run.setting_opt("max_input_tokens", max_input_tokens)?,
                max_output_tokens: run.setting_opt("max_output_tokens", max_output_tokens)?,
            };
            let manifest = build_training_manifest(&overrides).map_err(input)?;
            run.emit(out.output.as_deref(), &pretty(&manifest))?
        }
        Command::Decode(args) => cmd_decode(&mut run, args, cli.seed)?,
        Command::MergeLora { base, adapter, alpha, output } => cmd_merge_lora(&mut run, base, adapter, alpha, output)?,
        Command::MergeTies { inputs, base, density, weights, lambda, output } => {
            cmd_merge_ties(&mut run, inputs, base, density, weights, lambda, output)?
        }
        Command::Eval(args) => cmd_eval(&mut run, args)?,
        Command::Report { rows, decimals, out } => cmd_report(&mut run, rows, decimals, out)?,
    }
    run.finish()
}

/// Runs the CLI on `argv` (including the program name) and returns the exit
/// status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let args = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match dispatch(cli, args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
