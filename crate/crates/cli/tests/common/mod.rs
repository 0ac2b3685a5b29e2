#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use pairgen::corpus::write_corpus;
use pairgen::corpus::write_qrels;
use pairgen::fixture::{eval_fixture, synthetic_corpus};
use pairgen_cli::config::{Overrides, PipelineConfig};
use serde_json::{json, Value};

pub fn exemplar_dir() -> PathBuf {
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/exemplars"))
}

/// Write a synthetic corpus, test queries, qrels and a config into `dir`.
/// `extra` is merged over the base config. Returns the config path.
pub fn workspace(dir: &Path, docs: usize, extra: Value) -> PathBuf {
    let corpus = synthetic_corpus(docs, 1);
    write_corpus(dir.join("corpus.jsonl"), &corpus.documents).unwrap();
    let eval = eval_fixture(&corpus, 1, false);
    let queries: String = eval
        .queries
        .iter()
        .map(|q| format!("{}\n", json!({"_id": q.id, "text": q.text})))
        .collect();
    fs::write(dir.join("queries.jsonl"), queries).unwrap();
    write_qrels(dir.join("qrels.tsv"), &eval.qrels).unwrap();

    let mut cfg = json!({
        "corpus": "corpus.jsonl",
        "queries": "queries.jsonl",
        "qrels": "qrels.tsv",
        "exemplars": exemplar_dir().join("passage.jsonl"),
        "flow": "pairwise",
        "seed": 7,
        "workers": 2,
        "out": "out",
        "mock": {"invalid_rate": 0.1, "failure_rate": 0.05}
    });
    if let (Some(base), Some(more)) = (cfg.as_object_mut(), extra.as_object()) {
        for (k, v) in more {
            base.insert(k.clone(), v.clone());
        }
    }
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

pub fn load(config: &Path, overrides: Overrides) -> PipelineConfig {
    PipelineConfig::load(config, &overrides).unwrap()
}

/// Every generated data file, keyed by name; progress and manifest
/// (which carries timestamps) are left out.
pub fn outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), p))
        .filter(|(n, _)| n != "progress.jsonl" && n != "manifest.json")
        .map(|(n, p)| (n, fs::read(p).unwrap()))
        .collect();
    files.sort();
    files
}
