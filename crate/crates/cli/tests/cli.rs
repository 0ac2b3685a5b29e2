//! Subcommands driven through the library and the built binary.

mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

use common::{load, outputs, workspace};
use pairgen_cli::commands::{self, GenerateStatus};
use pairgen_cli::config::{Overrides, ScorerKind};
use serde_json::json;

fn bin(args: &[&str], cwd: &Path) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_pairgen")).args(args).current_dir(cwd).output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

#[test]
fn full_pipeline_through_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = load(&workspace(dir.path(), 120, json!({"validation_size": 20})), Overrides::default());

    assert_eq!(commands::cmd_index(&cfg).unwrap(), 120);
    let GenerateStatus::Complete(manifest) = commands::cmd_generate(&cfg, None).unwrap() else {
        panic!("generation halted")
    };
    assert!(commands::verify_manifest(&cfg.out).unwrap().is_empty());
    assert_eq!(manifest.files.len(), 6);
    let retained = commands::read_examples(&cfg.out.join(commands::SYNTHETIC_FILE)).unwrap();
    assert_eq!(retained.len() as u64, manifest.stages.values().map(|s| s.train_examples).sum::<u64>());

    let table = commands::cmd_stats(&cfg.out).unwrap();
    assert!(table.starts_with("Stage"));
    assert!(table.contains("pairwise generate"));

    assert!(commands::cmd_negatives(&cfg, None).unwrap() > 0);
    let report = commands::cmd_train(&cfg, None).unwrap();
    assert!(report.validation_accuracy.is_some());
    let (train, validation) = commands::cmd_export(&cfg, None).unwrap();
    assert_eq!(train + validation, retained.len());

    let oracle = commands::cmd_evaluate(&cfg, Some(ScorerKind::Oracle), None).unwrap();
    assert!(oracle.iter().all(|r| (r.mean - 1.0).abs() < 1e-12));
    let random = commands::cmd_evaluate(&cfg, Some(ScorerKind::Random), None).unwrap();
    let trained = commands::cmd_evaluate(&cfg, Some(ScorerKind::Baseline), None).unwrap();
    assert!(trained[0].mean > random[0].mean);
    commands::cmd_evaluate(&cfg, Some(ScorerKind::Bm25), None).unwrap();
    assert!(cfg.out.join(commands::RUN_FILE).exists());

    let summary = commands::cmd_report(&cfg.out).unwrap();
    assert!(summary.contains("Generation statistics") && summary.contains("NDCG@10 (exponential)"));
}

#[test]
fn relevant_only_and_fine_grained_flows_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = load(&workspace(dir.path(), 60, json!({"flow": "relevant-only"})), Overrides::default());
    let GenerateStatus::Complete(m) = commands::cmd_generate(&cfg, None).unwrap() else { panic!() };
    assert_eq!(m.stages.len(), 2);
    assert!(commands::cmd_stats(&cfg.out).unwrap().contains("relevant-only total"));

    let fine = json!({
        "flow": "label-pairs",
        "labels": "fine-grained",
        "doc_field": "product",
        "exemplars": common::exemplar_dir().join("product.jsonl"),
        "out": "fine"
    });
    let cfg = load(&workspace(dir.path(), 40, fine), Overrides::default());
    let GenerateStatus::Complete(m) = commands::cmd_generate(&cfg, None).unwrap() else { panic!() };
    assert_eq!(m.labels.len(), 4);
}

#[test]
fn halted_run_resumes_to_identical_output() {
    let dir = tempfile::tempdir().unwrap();
    let config = workspace(dir.path(), 50, json!({}));
    let resumed = load(&config, Overrides { out: Some(dir.path().join("a")), ..Overrides::default() });
    assert_eq!(commands::cmd_generate(&resumed, Some(20)).unwrap(), GenerateStatus::Halted { completed: 20 });
    assert!(matches!(commands::cmd_generate(&resumed, None).unwrap(), GenerateStatus::Complete(_)));
    let fresh = load(&config, Overrides { out: Some(dir.path().join("b")), ..Overrides::default() });
    commands::cmd_generate(&fresh, None).unwrap();
    assert_eq!(outputs(&resumed.out), outputs(&fresh.out));
}

#[test]
fn changed_config_refuses_stale_progress() {
    let dir = tempfile::tempdir().unwrap();
    let config = workspace(dir.path(), 30, json!({}));
    let cfg = load(&config, Overrides::default());
    commands::cmd_generate(&cfg, Some(5)).unwrap();
    let other = load(&config, Overrides { seed: Some(8), ..Overrides::default() });
    assert!(commands::cmd_generate(&other, None).is_err());
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let config = workspace(root, 30, json!({}));
    let config = config.to_str().unwrap();

    let (code, stdout, _) = bin(&["--config", config, "generate"], root);
    assert_eq!(code, 0);
    assert!(stdout.contains("% Valid Queries"));
    let (code, stdout, _) = bin(&["stats", "--input", root.join("out").to_str().unwrap()], root);
    assert_eq!(code, 0, "{stdout}");

    fs::write(root.join("bad.json"), r#"{"corpus": "corpus.jsonl", "flow": "pairwise"}"#).unwrap();
    assert_eq!(bin(&["--config", "bad.json", "generate"], root).0, 2);
    let remote = workspace(root, 30, json!({"backend": {"kind": "remote", "endpoint": "http://127.0.0.1:9"}}));
    fs::remove_dir_all(root.join("out")).unwrap();
    let (code, _, stderr) = bin(&["--config", remote.to_str().unwrap(), "generate"], root);
    assert_eq!(code, 3, "{stderr}");
    assert!(!root.join("out").exists(), "output written before the backend check");
    fs::create_dir(root.join("empty")).unwrap();
    assert_eq!(bin(&["stats", "--input", "empty"], root).0, 4);
    let (code, _, _) = bin(&["--config", config, "--workers", "0", "generate"], root);
    assert_eq!(code, 2);
}

#[test]
fn stats_renders_published_counters() {
    let path = Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/stats/pairwise_trec_covid.json"));
    let table = commands::cmd_stats(path).unwrap();
    let row = table.lines().nth(1).unwrap();
    assert!(row.starts_with("pairwise generate"));
    assert!(row.split_whitespace().rev().take(3).eq(["0.50", "0.50", "0.89"]), "{row}");
}

#[test]
fn judged_pool_when_qrels_carry_negatives() {
    let dir = tempfile::tempdir().unwrap();
    let config = workspace(dir.path(), 80, json!({"eval": {"gold_negatives": true}}));
    let corpus = pairgen::fixture::synthetic_corpus(80, 1);
    let eval = pairgen::fixture::eval_fixture(&corpus, 1, true);
    pairgen::corpus::write_qrels(dir.path().join("qrels.tsv"), &eval.qrels).unwrap();
    let cfg = load(&config, Overrides::default());
    commands::cmd_evaluate(&cfg, Some(ScorerKind::Bm25), None).unwrap();
    let run = fs::read_to_string(cfg.out.join(commands::RUN_FILE)).unwrap();
    assert_eq!(run.lines().count(), eval.qrels.len());

    let pooled = load(&workspace(dir.path(), 80, json!({"eval": {"pool_depth": 20}})), Overrides::default());
    commands::cmd_evaluate(&pooled, Some(ScorerKind::Bm25), None).unwrap();
    let run = fs::read_to_string(pooled.out.join(commands::RUN_FILE)).unwrap();
    assert!(run.lines().count() > eval.qrels.iter().filter(|(_, _, g)| *g > 0).count());
}

#[test]
fn missing_qrels_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = load(&workspace(dir.path(), 20, json!({"qrels": null})), Overrides::default());
    let err = commands::cmd_evaluate(&cfg, None, None).unwrap_err();
    assert!(matches!(err, pairgen_cli::error::CliError::MissingQrels));
    assert_eq!(err.exit_code(), 4);
}
