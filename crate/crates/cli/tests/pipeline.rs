//! The full CLI pipeline over the fixture corpora.

mod common;

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Stdio};

use serde_json::{json, Value};

use common::{ciem, fixture, read_jsonl, BIN};

const MODERATORS: &str = "ann,bo,cy";

fn json_file(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

fn has_keys(v: &Value, keys: &[&str]) {
    for k in keys {
        assert!(v.get(k).is_some(), "missing {k:?} in {v}");
    }
}

/// Deterministic verdicts: every seventh pair is rejected by two moderators.
fn write_verdicts(qa: &Path, out: &Path) {
    let pairs: Vec<Value> = read_jsonl(qa);
    let mut lines = String::new();
    for (i, p) in pairs.iter().enumerate() {
        for (round, m) in MODERATORS.split(',').enumerate() {
            let judgment = if i % 7 == 0 && round < 2 { "incorrect" } else { "correct" };
            let v = json!({
                "qa_id": p["qa_id"],
                "moderator_id": m,
                "round_index": round + 1,
                "judgment": judgment,
                "timestamp": "2026-01-01T00:00:00Z",
            });
            lines.push_str(&v.to_string());
            lines.push('\n');
        }
    }
    std::fs::write(out, lines).unwrap();
}

/// Every stage from ingestion to CIT export. Returns the files worth comparing.
fn run_pipeline(d: &Path) -> Vec<&'static str> {
    let test = fixture("coco_test_20.json");
    let train = fixture("coco_train_20.json");
    let steps: Vec<Vec<&str>> = vec![
        vec!["ingest", "--captions", &test, "--split", "test", "--out", "corpus.jsonl"],
        vec!["ingest", "--captions", &train, "--split", "train", "--out", "train.jsonl"],
        vec!["generate", "--corpus", "corpus.jsonl", "--backend", "stub", "--kinds", "factual,contrastive", "--out", "qa.jsonl"],
    ];
    for s in &steps {
        ciem(d, s).ok().unwrap();
    }
    write_verdicts(&d.join("qa.jsonl"), &d.join("verdicts.jsonl"));
    let steps: Vec<Vec<&str>> = vec![
        vec!["review", "import", "--verdicts", "verdicts.jsonl", "--qa", "qa.jsonl", "--moderators", MODERATORS, "--corpus", "corpus.jsonl"],
        vec!["review", "report", "--out", "errors.json"],
        vec!["adjudicate", "--out", "clean.jsonl"],
        vec!["evaluate", "--qa", "clean.jsonl", "--endpoint", "stub:always-no", "--images-root", "/images", "--out", "answers.jsonl"],
        vec!["report", "--qa", "clean.jsonl", "--answers", "answers.jsonl", "--out", "metrics.json"],
        vec!["cit", "generate", "--train-corpus", "train.jsonl", "--eval-corpus", "corpus.jsonl", "--backend", "stub", "--out", "cit/cit.jsonl"],
        vec!["cit", "export", "--cit", "cit/cit.jsonl", "--format", "conversations_json", "--seed", "3", "--out", "conv.json"],
        vec!["cit", "export", "--cit", "cit/cit.jsonl", "--format", "qa_jsonl", "--out", "cit_qa.jsonl"],
    ];
    for s in &steps {
        ciem(d, s).ok().unwrap();
    }
    vec![
        "corpus.jsonl",
        "corpus.jsonl.manifest.json",
        "train.jsonl",
        "qa.jsonl",
        "qa.jsonl.manifest.json",
        "qa.quarantine.jsonl",
        "errors.json",
        "clean.jsonl",
        "clean.jsonl.manifest.json",
        "answers.jsonl",
        "answers.jsonl.manifest.json",
        "metrics.json",
        "cit/cit.jsonl",
        "cit/cit_manifest.json",
        "conv.json",
        "cit_qa.jsonl",
        "ciem_state/verdicts.jsonl",
    ]
}

#[test]
fn pipeline_outputs_have_the_documented_shape() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    run_pipeline(d);

    let corpus: Vec<Value> = read_jsonl(&d.join("corpus.jsonl"));
    assert_eq!(corpus.len(), 20);
    for r in &corpus {
        has_keys(r, &["image_id", "file_name", "split", "captions"]);
        assert_eq!(r["split"], "test");
    }

    let qa: Vec<Value> = read_jsonl(&d.join("qa.jsonl"));
    assert!(!qa.is_empty());
    for p in &qa {
        has_keys(
            p,
            &["qa_id", "image_id", "question", "gold_answer", "polarity", "category", "source_caption_annotation_id", "provenance"],
        );
        let expected = if p["polarity"] == "factual" { "Yes" } else { "No" };
        assert_eq!(p["gold_answer"], expected);
        assert_eq!(p["qa_id"].as_str().unwrap().len(), 16);
    }
    let manifest = json_file(&d.join("qa.jsonl.manifest.json"));
    has_keys(&manifest, &["artifact", "template_version", "seeds", "source_digest", "counts", "settings"]);
    assert_eq!(manifest["counts"]["pairs"], qa.len());

    let errors = json_file(&d.join("errors.json"));
    let rejected = qa.len().div_ceil(7);
    assert_eq!(errors["total"]["count"], qa.len());
    assert_eq!(errors["total"]["error_count"], rejected);
    let clean: Vec<Value> = read_jsonl(&d.join("clean.jsonl"));
    assert_eq!(clean.len(), qa.len() - rejected);
    let mut ids: Vec<&str> = clean.iter().map(|p| p["qa_id"].as_str().unwrap()).collect();
    assert!(ids.windows(2).all(|w| w[0] < w[1]), "clean export not sorted by qa_id");
    ids.dedup();
    assert_eq!(ids.len(), clean.len());

    let answers: Vec<Value> = read_jsonl(&d.join("answers.jsonl"));
    assert_eq!(answers.len(), clean.len());
    assert!(answers.iter().all(|a| a["normalized"] == "No"));
    let metrics = json_file(&d.join("metrics.json"));
    assert_eq!(metrics["precision"], "undefined");
    assert_eq!(metrics["f1"], "undefined");
    assert_eq!(metrics["recall"], 0.0);
    assert_eq!(metrics["specificity"], 1.0);

    let cit: Vec<Value> = read_jsonl(&d.join("cit/cit.jsonl"));
    let cit_manifest = json_file(&d.join("cit/cit_manifest.json"));
    assert_eq!(cit_manifest["counts"]["samples"], cit.len());
    let conv = json_file(&d.join("conv.json"));
    for e in conv.as_array().unwrap() {
        has_keys(e, &["id", "image", "conversations"]);
        assert_eq!(e["conversations"][0]["from"], "human");
        assert_eq!(e["conversations"][1]["from"], "gpt");
    }
    let flat: Vec<Value> = read_jsonl(&d.join("cit_qa.jsonl"));
    assert_eq!(flat.len(), cit.len());
}

#[test]
fn clean_room_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let files = run_pipeline(a.path());
    run_pipeline(b.path());
    for f in files {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs between clean-room runs");
    }
}

#[test]
fn rerunning_import_and_generate_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    run_pipeline(d);
    let before = std::fs::read(d.join("ciem_state/verdicts.jsonl")).unwrap();
    ciem(d, &["review", "import", "--verdicts", "verdicts.jsonl"]).ok().unwrap();
    assert_eq!(before, std::fs::read(d.join("ciem_state/verdicts.jsonl")).unwrap());

    let run = ciem(d, &["generate", "--corpus", "corpus.jsonl", "--backend", "stub", "--kinds", "factual,contrastive", "--out", "qa2.jsonl"])
        .ok()
        .unwrap();
    assert!(run.stderr.contains("backend calls: 0"), "{}", run.stderr);
    assert_eq!(std::fs::read(d.join("qa.jsonl")).unwrap(), std::fs::read(d.join("qa2.jsonl")).unwrap());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(ciem(d, &["--help"]).code, Some(0));
    assert_eq!(ciem(d, &["generate", "--bogus"]).code, Some(1));
    assert_eq!(ciem(d, &["ingest", "--captions", "missing.json", "--split", "test", "--out", "c.jsonl"]).code, Some(2));

    run_pipeline(d);
    let unknown_format = ciem(d, &["cit", "export", "--cit", "cit/cit.jsonl", "--format", "yaml", "--out", "x"]);
    assert_eq!(unknown_format.code, Some(1));
    // Output path colliding with an input.
    let clash = ciem(d, &["report", "--qa", "clean.jsonl", "--answers", "answers.jsonl", "--out", "clean.jsonl"]);
    assert_eq!(clash.code, Some(1), "{}", clash.stderr);

    // Bad verdict file: nothing is imported.
    let before = std::fs::read(d.join("ciem_state/verdicts.jsonl")).unwrap();
    std::fs::write(d.join("bad.jsonl"), "{\"qa_id\":\"ffffffffffffffff\",\"moderator_id\":\"ann\",\"judgment\":\"correct\"}\n").unwrap();
    assert_eq!(ciem(d, &["review", "import", "--verdicts", "bad.jsonl"]).code, Some(2));
    assert_eq!(before, std::fs::read(d.join("ciem_state/verdicts.jsonl")).unwrap());

    // Nothing listens on port 9 of localhost, so every request is a transport failure.
    std::fs::write(d.join("no_retry.toml"), "[backend]\nmax_retries = 0\n").unwrap();
    let down = ciem(
        d,
        &["--config", "no_retry.toml", "evaluate", "--qa", "clean.jsonl", "--endpoint", "http://127.0.0.1:9/v1/chat", "--images-root", "/images", "--out", "down.jsonl", "--max-failure-pct", "0"],
    );
    assert_eq!(down.code, Some(3), "{}", down.stderr);
}

#[test]
fn review_serve_exposes_the_api() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let test = fixture("coco_test_20.json");
    ciem(d, &["ingest", "--captions", &test, "--split", "test", "--out", "corpus.jsonl"]).ok().unwrap();
    ciem(d, &["generate", "--corpus", "corpus.jsonl", "--backend", "stub", "--kinds", "factual,contrastive", "--out", "qa.jsonl"]).ok().unwrap();

    let mut child = Command::new(BIN)
        .args(["review", "serve", "--port", "0", "--qa", "qa.jsonl", "--moderators", MODERATORS, "--corpus", "corpus.jsonl"])
        .current_dir(d)
        .env_remove("RUST_LOG")
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stderr = BufReader::new(child.stderr.take().unwrap());
    let mut line = String::new();
    stderr.read_line(&mut line).unwrap();
    let base = line
        .split_whitespace()
        .find(|w| w.starts_with("http://"))
        .unwrap_or_else(|| panic!("no address in {line:?}"))
        .to_string();

    let rt = tokio::runtime::Runtime::new().unwrap();
    let result = rt.block_on(async {
        let http = reqwest::Client::new();
        let item: Value = http
            .get(format!("{base}/api/review/next?moderator=bo"))
            .send()
            .await?
            .error_for_status()?
            .json()
            .await?;
        assert!(item["file_name"].as_str().unwrap().starts_with("COCO_val_"), "{item}");
        assert!(item.get("caption").is_some());
        let resp = http
            .post(format!("{base}/api/review/verdict"))
            .json(&json!({"qa_id": item["qa_id"], "moderator_id": "bo", "judgment": "correct"}))
            .send()
            .await?;
        assert_eq!(resp.status().as_u16(), 201);
        let body: Value = resp.json().await?;
        assert_eq!(body["round_index"], 2);
        let progress: Value = http
            .get(format!("{base}/api/review/progress?moderator=bo"))
            .send()
            .await?
            .json()
            .await?;
        assert_eq!(progress["done"], 1);
        let report = http.get(format!("{base}/api/review/report")).send().await?;
        assert_eq!(report.status().as_u16(), 409);
        Ok::<_, reqwest::Error>(())
    });
    child.kill().unwrap();
    child.wait().unwrap();
    result.unwrap();

    // The accepted verdict was persisted.
    let stored: Vec<Value> = read_jsonl(&d.join("ciem_state/verdicts.jsonl"));
    assert_eq!(stored.len(), 1);
    assert_eq!(stored[0]["moderator_id"], "bo");
}
