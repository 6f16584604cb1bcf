mod common;

use std::collections::BTreeSet;

use common::{cog, demo_subset, ok, p};
use serde_json::Value;

#[test]
fn stages_chain_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let input = demo_subset(d, 30);
    let summary = ok(&["ingest", "--input", input.to_str().unwrap(), "--out", &p(d, "corpus.json")]);
    assert_eq!(summary["docs"], 30);

    let seg = ok(&["segment", "--corpus", &p(d, "corpus.json"), "--k", "8", "--lmin", "2", "--lmax", "8", "--d", "16", "--out", &p(d, "segs.jsonl")]);
    assert!(seg["phrases"].as_u64().unwrap() > 0);
    let first: Value = serde_json::from_str(std::fs::read_to_string(p(d, "segs.jsonl")).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(first["doc"], 0);
    assert!(first["segments"].is_array());

    let tr = ok(&[
        "train-toy", "--corpus", &p(d, "corpus.json"), "--segments", &p(d, "segs.jsonl"), "--steps", "3", "--lr", "0.1",
        "--seed", "1", "--d", "16", "--out", &p(d, "params.json"),
    ]);
    assert_eq!(tr["steps"], 3);
    let log = std::fs::read_to_string(p(d, "params.json.log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 4);
    let entry: Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    let keys: BTreeSet<&str> = entry.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys, BTreeSet::from(["step", "L", "L_p", "L_t", "acc"]));

    ok(&["build-index", "--corpus", &p(d, "corpus.json"), "--params", &p(d, "params.json"), "--out", &p(d, "index.cog")]);
    std::fs::write(p(d, "prefixes.txt"), "the old sailor walked\n\nmy neighbour painted the\n").unwrap();
    let g = ok(&[
        "generate", "--index", &p(d, "index.cog"), "--prefix-file", &p(d, "prefixes.txt"), "--mode", "nucleus", "--p", "0.95",
        "--max-new-tokens", "24", "--seed", "3", "--trace-out", &p(d, "traces/t.jsonl"), "--out", &p(d, "gen.jsonl"),
    ]);
    assert_eq!(g["samples"], 2);
    assert_eq!(g["tokens"], 48);
    for i in 0..2 {
        let trace = std::fs::read_to_string(p(d, &format!("traces/t.{i:04}.jsonl"))).unwrap();
        let mut words = 0;
        for line in trace.lines() {
            let v: Value = serde_json::from_str(line).unwrap();
            let keys: BTreeSet<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
            assert_eq!(keys, BTreeSet::from(["kind", "src", "s", "e", "token", "score", "prob", "surface"]));
            words += v["surface"].as_str().unwrap().split_whitespace().count();
        }
        assert_eq!(words, 24);
    }

    let ev = ok(&["eval", "--traces", &p(d, "traces/*.jsonl"), "--out", &p(d, "report.json")]);
    assert_eq!(ev["samples"], 2);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(p(d, "report.json")).unwrap()).unwrap();
    for k in ["rep_2", "rep_3", "rep_4", "diversity", "samples", "token_unit", "step_stats"] {
        assert!(report.get(k).is_some(), "missing {k}");
    }

    let b = ok(&[
        "bench", "--index", &p(d, "index.cog"), "--prefix-file", &p(d, "prefixes.txt"), "--max-new-tokens", "16",
        "--runs", "20",
    ]);
    assert_eq!(b["tokens_only"]["steps_per_sample"], 16.0);
    assert!(b["phrase"]["steps_per_sample"].as_f64().unwrap() <= 16.0);
    assert!(b["phrase"]["tokens_per_step"].as_f64().unwrap() >= 1.0);
}

#[test]
fn token_only_generation_takes_one_step_per_token() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let input = demo_subset(d, 10);
    ok(&["ingest", "--input", input.to_str().unwrap(), "--out", &p(d, "c.json")]);
    ok(&["build-index", "--corpus", &p(d, "c.json"), "--d", "8", "--seed", "2", "--out", &p(d, "i.cog")]);
    std::fs::write(p(d, "pre.txt"), "a curious child\n").unwrap();
    let g = ok(&[
        "generate", "--index", &p(d, "i.cog"), "--prefix-file", &p(d, "pre.txt"), "--tokens-only", "--max-new-tokens", "20",
        "--trace-out", &p(d, "t.jsonl"),
    ]);
    assert_eq!(g["steps"], 20);
    assert_eq!(std::fs::read_to_string(p(d, "t.jsonl")).unwrap().lines().count(), 20);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // Usage: missing required flag, unknown subcommand, invalid value.
    assert_eq!(cog(&["ingest", "--input", "x"]).status.code(), Some(1));
    assert_eq!(cog(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(cog(&["--help"]).status.code(), Some(0));
    // Data: missing or malformed input.
    assert_eq!(cog(&["ingest", "--input", &p(d, "nope.jsonl"), "--out", &p(d, "c.json")]).status.code(), Some(2));
    std::fs::write(p(d, "bad.jsonl"), "{\"id\": 1}\n").unwrap();
    let out = cog(&["ingest", "--input", &p(d, "bad.jsonl"), "--out", &p(d, "c.json")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));

    let input = demo_subset(d, 5);
    ok(&["ingest", "--input", input.to_str().unwrap(), "--out", &p(d, "c.json")]);
    ok(&["build-index", "--corpus", &p(d, "c.json"), "--d", "8", "--out", &p(d, "i.cog")]);
    std::fs::write(p(d, "pre.txt"), "the\n").unwrap();
    let gen = |extra: &[&str]| {
        let mut a = vec!["generate", "--index", &p(d, "i.cog"), "--prefix-file", &p(d, "pre.txt"), "--trace-out", &p(d, "t.jsonl")]
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>();
        a.extend(extra.iter().map(|s| s.to_string()));
        let refs: Vec<&str> = a.iter().map(String::as_str).collect();
        cog(&refs).status.code()
    };
    assert_eq!(gen(&["--p", "1.5"]), Some(1));
    assert_eq!(gen(&["--coarse-refresh", "0"]), Some(1));
    assert_eq!(gen(&["--backend", "sidecar"]), Some(1));
    assert_eq!(gen(&[]), Some(0));

    // A corrupted index is a data error.
    let mut bytes = std::fs::read(p(d, "i.cog")).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0xff;
    std::fs::write(p(d, "i.cog"), bytes).unwrap();
    assert_eq!(gen(&[]), Some(2));

    assert_eq!(cog(&["eval", "--traces", &p(d, "none/*.jsonl"), "--out", &p(d, "r.json")]).status.code(), Some(2));
    assert_eq!(
        cog(&["bench", "--index", &p(d, "i.cog"), "--prefix-file", &p(d, "pre.txt"), "--runs", "5"]).status.code(),
        Some(2)
    );
}

#[test]
fn bench_requires_twenty_runs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let input = demo_subset(d, 5);
    ok(&["ingest", "--input", input.to_str().unwrap(), "--out", &p(d, "c.json")]);
    ok(&["build-index", "--corpus", &p(d, "c.json"), "--d", "8", "--out", &p(d, "i.cog")]);
    std::fs::write(p(d, "pre.txt"), "the\n").unwrap();
    let out = cog(&["bench", "--index", &p(d, "i.cog"), "--prefix-file", &p(d, "pre.txt"), "--runs", "19"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn frozen_vocabulary_maps_unseen_words_to_unk() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let input = demo_subset(d, 5);
    ok(&["ingest", "--input", input.to_str().unwrap(), "--out", &p(d, "train.json")]);
    std::fs::write(p(d, "other.jsonl"), "{\"id\": 9, \"text\": \"the zebra walked\"}\n").unwrap();
    let s = ok(&["ingest", "--input", &p(d, "other.jsonl"), "--out", &p(d, "other.json"), "--vocab-from", &p(d, "train.json")]);
    assert_eq!(s["unk_tokens"], 1);
    let base = ok(&["ingest", "--input", input.to_str().unwrap(), "--out", &p(d, "again.json")]);
    assert_eq!(s["vocab"], base["vocab"]);
}
