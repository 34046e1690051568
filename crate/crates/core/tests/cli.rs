// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dischargekit::merge::{load_tensor_map, save_tensor_map, NamedTensorMap, Tensor};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

const BIN: &str = env!("CARGO_BIN_EXE_dischargekit");
const STUB: &str = env!("CARGO_BIN_EXE_stub-provider");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("DISCHARGEKIT_SCORER").env_remove("DISCHARGEKIT_LM").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn vec_map(values: &[f32]) -> NamedTensorMap {
    let mut m = NamedTensorMap::new();
    m.insert("w", Tensor::new(vec![values.len()], values.to_vec()).unwrap());
    m
}

fn sha256_hex(path: &Path) -> String {
    hex::encode(Sha256::digest(std::fs::read(path).unwrap()))
}

fn manifest(output: &Path) -> Value {
    let mut name = output.file_name().unwrap().to_os_string();
    name.push(".manifest.json");
    serde_json::from_str(&std::fs::read_to_string(output.with_file_name(name)).unwrap()).unwrap()
}

const NOTE: &str = "Name: ___\nHPI: fever and cough\nBrief Hospital Course:\npatient treated, stable\nMedications on Admission:\naspirin\nDischarge Instructions:\npatient stable home\n";

fn write_corpus(dir: &Path, notes: &[(&str, &str)]) -> PathBuf {
    let path = dir.join("corpus.jsonl");
    let text: String = notes.iter().map(|(id, t)| format!("{}\n", json!({"note_id": id, "text": t}))).collect();
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn help_version_and_usage_errors() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
    assert_eq!(run(&["decode", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(run(&[]).status.code(), Some(1));
}

#[test]
fn eval_prints_published_overall() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("aehrc.json");
    std::fs::write(
        &scores,
        r#"{"BLEU-4": 9.7, "ROUGE-1": 41.4, "ROUGE-2": 19.2, "ROUGE-L": 28.4, "BERTScore": 38.3, "Meteor": 39.8, "AlignScore": 27.4, "MEDCON": 33.2}"#,
    )
    .unwrap();
    let o = run(&["eval", "--scores", p(&scores), "--decimals", "1", "--name", "aehrc"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.lines().last().unwrap() == "Overall: 29.7", "{out}");
    assert!(out.lines().any(|l| l.starts_with("aehrc") && l.contains("29.7")), "{out}");
}

#[test]
fn empty_corpus_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("empty.jsonl");
    std::fs::write(&corpus, "").unwrap();
    let o = run(&["parse", "--corpus", p(&corpus)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no records"), "{}", stderr(&o));
    let o = run(&["parse", "--corpus", p(&dir.path().join("absent.jsonl"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn unwritable_output_is_an_internal_error() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.ntm");
    save_tensor_map(&vec_map(&[1.0]), &a).unwrap();
    let out = dir.path().join("missing").join("out.ntm");
    let o = run(&["merge-ties", "--input", p(&a), "-o", p(&out)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn merge_ties_fixture_and_stable_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.ntm"), dir.path().join("b.ntm"));
    save_tensor_map(&vec_map(&[1.0, -2.0, 3.0, 0.5]), &a).unwrap();
    save_tensor_map(&vec_map(&[2.0, -1.0, -0.5, 4.0]), &b).unwrap();
    let cfg = dir.path().join("merge.conf");
    std::fs::write(&cfg, "# fixture\ndensity = 0.5\nlambda = 1.0\n").unwrap();

    let mut runs = Vec::new();
    for name in ["m1.ntm", "m2.ntm"] {
        let out = dir.path().join(name);
        let o = run(&["--config", p(&cfg), "merge-ties", "--input", p(&a), "--input", p(&b), "-o", p(&out)]);
        assert!(o.status.success(), "{}", stderr(&o));
        let merged = load_tensor_map(&out).unwrap();
        assert_eq!(merged.get("w").unwrap().data(), &[2.0, -2.0, 3.0, 4.0]);
        runs.push((std::fs::read(&out).unwrap(), manifest(&out)));
    }
    assert_eq!(runs[0].0, runs[1].0);
    let (m1, m2) = (&runs[0].1, &runs[1].1);
    assert_eq!(m1["inputs"], m2["inputs"]);
    let digests: Vec<(&str, &str)> =
        m1["inputs"].as_array().unwrap().iter().map(|i| (i["path"].as_str().unwrap(), i["sha256"].as_str().unwrap())).collect();
    for path in [&a, &b, &cfg] {
        let want = sha256_hex(path);
        assert!(digests.iter().any(|(p, d)| Path::new(p) == path.as_path() && *d == want), "{path:?} missing from {digests:?}");
    }
    assert_eq!(m1["config_file"], json!({"density": "0.5", "lambda": "1.0"}));
    assert_eq!(m1["settings"]["density"], "0.5");
    assert_eq!(m1["command"], "merge-ties");
}

#[test]
fn merge_lora_scalar_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let mut base = NamedTensorMap::new();
    base.insert("w", Tensor::new(vec![1, 1], vec![2.0]).unwrap());
    let (mut a, mut b) = (vec![0.0f32; 64], vec![0.0f32; 64]);
    a[0] = 3.0;
    b[0] = 4.0;
    let mut adapter = NamedTensorMap::new();
    adapter.insert("w.lora_A", Tensor::new(vec![64, 1], a).unwrap());
    adapter.insert("w.lora_B", Tensor::new(vec![1, 64], b).unwrap());
    let (bp, ap, out) = (dir.path().join("base.ntm"), dir.path().join("adapter.ntm"), dir.path().join("merged.ntm"));
    save_tensor_map(&base, &bp).unwrap();
    save_tensor_map(&adapter, &ap).unwrap();
    let o = run(&["merge-lora", "--base", p(&bp), "--adapter", p(&ap), "--alpha", "16", "-o", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(load_tensor_map(&out).unwrap().get("w").unwrap().data(), &[5.0]);
}

#[test]
fn skipped_notes_are_reported_and_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path(), &[("good", NOTE), ("bad", "no sections here\n")]);
    let out = dir.path().join("parsed.json");
    let o = run(&["parse", "--corpus", p(&corpus), "-o", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("skipped bad"), "{}", stderr(&o));
    let parsed: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(parsed["notes"].as_array().unwrap().len(), 1);
    let m = manifest(&out);
    assert_eq!(m["skipped"][0]["note_id"], "bad");
    assert!(m["config_file"].is_null());
}

fn toy_files(dir: &Path) -> (PathBuf, PathBuf) {
    // <unk> -> patient -> stable -> home -> </s>
    let tok = dir.join("tok.json");
    std::fs::write(
        &tok,
        r#"{"kind": "whitespace", "vocab": {"<unk>": 0, "</s>": 1, "patient": 2, "stable": 3, "home": 4}, "eos": 1, "unk": 0}"#,
    )
    .unwrap();
    let mut logits = vec![vec![0.0; 5]; 5];
    for (from, to) in [(0, 2), (1, 1), (2, 3), (3, 4), (4, 1)] {
        logits[from][to] = 5.0;
    }
    let emb: Vec<Vec<f64>> = (0..5).map(|i| vec![1.0, i as f64]).collect();
    let model = dir.join("toy.json");
    std::fs::write(&model, json!({"logits": logits, "embeddings": emb, "eos": 1}).to_string()).unwrap();
    (tok, model)
}

#[test]
fn contexts_decode_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path(), &[("n1", NOTE), ("n2", &NOTE.replace("fever", "chest pain"))]);
    let (tok, model) = toy_files(dir.path());
    let ctx = dir.path().join("ctx.jsonl");
    let o = run(&["contexts", "--corpus", p(&corpus), "-o", p(&ctx)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(&ctx).unwrap().lines().count(), 4);

    let hyps = dir.path().join("hyps.jsonl");
    let o = run(&["decode", "--algo", "beam", "--model", p(&model), "--tokenizer", p(&tok), "--input", p(&ctx), "--max-new-tokens", "8", "-o", p(&hyps)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let lines: Vec<Value> = std::fs::read_to_string(&hyps).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 4);
    for l in &lines {
        assert_eq!(l["text"], "patient stable home");
        assert_eq!(l["stop_reason"], "EOS");
    }

    let report = dir.path().join("report.json");
    let o = run(&["eval", "--hyps", p(&hyps), "--corpus", p(&corpus), "--metrics", "BLEU-4,ROUGE-1,ROUGE-2,ROUGE-L,Meteor", "-o", p(&report)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("Overall: undefined"));
    let rep: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    // the DI hypothesis equals the gold DI text
    assert_eq!(rep["di"]["ROUGE-L"], 1.0);
    assert!(rep["bhc"]["ROUGE-1"].as_f64().unwrap() > 0.0);
    assert_eq!(rep["missing"], json!(["BERTScore", "AlignScore", "MEDCON"]));
}

#[test]
fn process_model_matches_table_model() {
    let dir = tempfile::tempdir().unwrap();
    let (_, model) = toy_files(dir.path());
    let cmd = format!("{STUB} lm --model {}", p(&model));
    for algo in ["greedy", "beam", "nucleus", "contrastive"] {
        let table = run(&["decode", "--algo", algo, "--model", p(&model), "--prefix", "0", "--top-k", "3", "--seed", "5"]);
        let process = run(&["decode", "--algo", algo, "--model-cmd", &cmd, "--prefix", "0", "--top-k", "3", "--seed", "5"]);
        assert!(table.status.success() && process.status.success(), "{} {}", stderr(&table), stderr(&process));
        assert_eq!(stdout(&table), stdout(&process), "{algo}");
    }
    let o = run(&["decode", "--model", p(&model), "--prefix", "9"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn scorer_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let rows = |t: &str| format!("{}\n{}\n", json!({"note_id": "n", "target_kind": "bhc", "text": t}), json!({"note_id": "n", "target_kind": "di", "text": t}));
    let (hyps, refs) = (dir.path().join("h.jsonl"), dir.path().join("r.jsonl"));
    std::fs::write(&hyps, rows("stable at discharge today")).unwrap();
    std::fs::write(&refs, rows("stable at discharge today")).unwrap();
    let o = Command::new(BIN)
        .args(["eval", "--hyps", p(&hyps), "--refs", p(&refs), "--decimals", "1"])
        .env("DISCHARGEKIT_SCORER", format!("{STUB} scorer --score 0.25"))
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    // four lexical metrics at 1.0 (METEOR 1 - 0.5/4^3), three at 0.25
    let meteor = 1.0 - 0.5 / 64.0;
    let overall = (4.0 + meteor + 3.0 * 0.25) / 8.0 * 100.0;
    assert!(stdout(&o).ends_with(&format!("Overall: {}\n", dischargekit::metrics::format_fixed(overall, 1))), "{}", stdout(&o));

    let o = Command::new(BIN)
        .args(["eval", "--hyps", p(&hyps), "--refs", p(&refs)])
        .env("DISCHARGEKIT_SCORER", format!("{STUB} scorer --score 1.5"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("outside [0, 1]"), "{}", stderr(&o));
}

#[test]
fn orphan_hypothesis_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (hyps, refs) = (dir.path().join("h.jsonl"), dir.path().join("r.jsonl"));
    std::fs::write(&hyps, format!("{}\n", json!({"note_id": "x", "target_kind": "bhc", "text": "a"}))).unwrap();
    std::fs::write(&refs, format!("{}\n", json!({"note_id": "y", "target_kind": "bhc", "text": "a"}))).unwrap();
    let o = run(&["eval", "--hyps", p(&hyps), "--refs", p(&refs), "--metrics", "ROUGE-1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn budget_command_reports_fields() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path(), &[("n1", NOTE)]);
    let o = run(&["budget", "--corpus", p(&corpus)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rep: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(rep["fields"]["target.di"]["budget"], 256);
    assert_eq!(rep["fields"]["target.di"]["counts"], json!([3]));
}
