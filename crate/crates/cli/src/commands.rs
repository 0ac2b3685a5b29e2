//! Subcommand implementations. Each writes into the configured output
//! directory and returns what it produced for printing.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use pairgen::backend::{Backend, BackendKind, MockBackend, RemoteBackend};
use pairgen::baseline::{
    export_training_data, predict_relevance, prepare, random_score, sample_validation, train_features, PointwiseModel,
    TrainReport,
};
use pairgen::corpus::{load_corpus, load_qrels, load_queries, sample_documents, write_corpus, Document, DocumentCollection};
use pairgen::evalmetrics::{ndcg_at_k, rank_with_scorer, write_report, write_trec_run, Gain, NdcgConfig, NdcgReport};
use pairgen::prompting::{load_labeled_pairs, LabelSet, TemplateSet};
use pairgen::retrieval::{augment_eval_pool, build_index, judged_pool, mine_hard_negatives, Bm25Index, HardNegativeMiner};
use pairgen::synthgen::{
    run_variant, Flow, FlowSets, NegativeMiner, PipelineSpec, ProgressLog, RunOptions, Stage, StageStats, StatsRow,
    SynthError, SyntheticExample,
};
use pairgen::text::derive_seed;
use serde::{Deserialize, Serialize};

use crate::config::{file_digest, PipelineConfig, ScorerKind};
use crate::error::CliError;

pub const SAMPLE_FILE: &str = "sample.jsonl";
pub const SYNTHETIC_FILE: &str = "synthetic.jsonl";
pub const CANDIDATES_FILE: &str = "candidates.jsonl";
pub const GENERATIONS_FILE: &str = "generations.jsonl";
pub const AUDIT_FILE: &str = "audit.jsonl";
pub const TRUNCATIONS_FILE: &str = "truncations.jsonl";
pub const STATS_FILE: &str = "stats.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PROGRESS_FILE: &str = "progress.jsonl";
pub const NEGATIVES_FILE: &str = "negatives.jsonl";
pub const INDEX_FILE: &str = "index.bm25";
pub const MODEL_FILE: &str = "model.txt";
pub const TRAIN_REPORT_FILE: &str = "train_report.json";
pub const EXPORT_FILE: &str = "train_export.jsonl";
pub const VALIDATION_EXPORT_FILE: &str = "validation_export.jsonl";
pub const RUN_FILE: &str = "run.trec";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const REPORT_FILE: &str = "report.txt";

/// Per-stage counters of one generation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsFile {
    pub flow: Flow,
    pub labels: LabelSet,
    pub stages: BTreeMap<Stage, StageStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub flow: Flow,
    pub labels: LabelSet,
    pub started_at_unix: u64,
    pub finished_at_unix: u64,
    pub stages: BTreeMap<Stage, StageStats>,
    /// Output file name to SHA-256 of its bytes.
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GenerateStatus {
    Complete(Box<RunManifest>),
    /// Stopped early on request; rerun to resume.
    Halted { completed: usize },
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(&item).map_err(|e| CliError::Data(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| CliError::io(path, e))?;
    }
    out.flush().map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_examples(path: &Path) -> Result<Vec<SyntheticExample>, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: SyntheticExample = serde_json::from_str(&line)
            .map_err(|e| CliError::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(ex);
    }
    Ok(out)
}

fn load_collection(cfg: &PipelineConfig) -> Result<DocumentCollection, CliError> {
    let load = load_corpus(&cfg.corpus)?;
    if !load.line_errors.is_empty() {
        eprintln!("warning: skipped {} malformed corpus lines", load.line_errors.len());
    }
    if load.collection.is_empty() {
        return Err(CliError::Data(format!("{} holds no documents", cfg.corpus.display())));
    }
    Ok(load.collection)
}

fn sampled(cfg: &PipelineConfig, corpus: &DocumentCollection) -> DocumentCollection {
    match cfg.sample_size {
        Some(n) => sample_documents(corpus, n, derive_seed(cfg.seed, "sample")),
        None => corpus.clone(),
    }
}

fn build_sets(cfg: &PipelineConfig, labels: &LabelSet) -> Result<FlowSets, CliError> {
    let pairs = load_labeled_pairs(&cfg.exemplars)?;
    let mut templates = TemplateSet::for_field(cfg.doc_field);
    if let Some(p) = &cfg.template_overrides {
        templates.load_overrides(p)?;
    }
    Ok(FlowSets::build(cfg.flow, &pairs, labels, &templates, cfg.label_pairs.as_deref())?)
}

fn make_backend(cfg: &PipelineConfig) -> Result<Box<dyn Backend>, CliError> {
    Ok(match cfg.backend.kind {
        BackendKind::Mock => Box::new(MockBackend::new(cfg.seed, cfg.mock.clone())?),
        BackendKind::Remote => Box::new(RemoteBackend::new(&cfg.backend)?),
    })
}

fn index_for(cfg: &PipelineConfig, corpus: &DocumentCollection) -> Result<Bm25Index, CliError> {
    let saved = cfg.out.join(INDEX_FILE);
    if saved.exists() {
        let index = Bm25Index::load(&saved)?;
        if index.params() == cfg.bm25 && index.doc_count() == corpus.len() {
            return Ok(index);
        }
    }
    Ok(build_index(corpus, cfg.bm25)?)
}

/// Write the sampled documents in corpus format.
pub fn cmd_sample(cfg: &PipelineConfig) -> Result<usize, CliError> {
    let docs = sampled(cfg, &load_collection(cfg)?);
    create_dir(&cfg.out)?;
    write_corpus(cfg.out.join(SAMPLE_FILE), &docs.documents)?;
    Ok(docs.len())
}

/// Sample, prompt, generate, parse, filter and deduplicate for the
/// configured flow. Finished documents are logged as they complete, so a
/// rerun with the same configuration resumes where the last one stopped.
pub fn cmd_generate(cfg: &PipelineConfig, halt_after: Option<usize>) -> Result<GenerateStatus, CliError> {
    let started = now_unix();
    let labels = cfg.labels.resolve()?;
    let corpus = load_collection(cfg)?;
    let docs = sampled(cfg, &corpus);
    let sets = build_sets(cfg, &labels)?;
    let backend = make_backend(cfg)?;
    backend.health_check()?;

    create_dir(&cfg.out)?;
    let hash = cfg.config_hash()?;
    let log = ProgressLog::open(cfg.out.join(PROGRESS_FILE), &hash)?;
    if log.completed() > 0 {
        eprintln!("resuming: {} documents already done", log.completed());
    }
    let index = match cfg.flow {
        Flow::RelevantOnly => Some(index_for(cfg, &corpus)?),
        _ => None,
    };
    let miner = index.as_ref().map(|index| HardNegativeMiner { index });
    let spec = PipelineSpec {
        sets,
        params: cfg.generation.clone(),
        filter_mode: cfg.filter_mode,
        negatives_per_query: cfg.negatives_per_query,
    };
    let options = RunOptions {
        workers: cfg.workers,
        halt_after,
    };
    let miner_ref = miner.as_ref().map(|m| m as &dyn NegativeMiner);
    let out = match run_variant(backend.as_ref(), &docs.documents, &spec, miner_ref, options, Some(&log)) {
        Err(SynthError::Halted { completed }) => return Ok(GenerateStatus::Halted { completed }),
        other => other?,
    };
    for (stage, s) in &out.stats {
        s.check().map_err(|e| CliError::Data(format!("{stage} statistics: {e}")))?;
    }

    let d = &cfg.out;
    write_jsonl(&d.join(SYNTHETIC_FILE), out.retained())?;
    write_jsonl(&d.join(CANDIDATES_FILE), &out.examples)?;
    write_jsonl(&d.join(GENERATIONS_FILE), &out.records)?;
    write_jsonl(&d.join(AUDIT_FILE), &out.audit)?;
    write_jsonl(&d.join(TRUNCATIONS_FILE), &out.truncations)?;
    let stats = StatsFile {
        flow: cfg.flow,
        labels: labels.clone(),
        stages: out.stats.clone(),
    };
    write_json(&d.join(STATS_FILE), &stats)?;

    let mut files = BTreeMap::new();
    for name in [SYNTHETIC_FILE, CANDIDATES_FILE, GENERATIONS_FILE, AUDIT_FILE, TRUNCATIONS_FILE, STATS_FILE] {
        files.insert(name.to_string(), file_digest(&d.join(name))?);
    }
    let manifest = RunManifest {
        tool: "pairgen".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: "generate".into(),
        config_hash: hash,
        flow: cfg.flow,
        labels,
        started_at_unix: started,
        finished_at_unix: now_unix(),
        stages: out.stats,
        files,
    };
    write_json(&d.join(MANIFEST_FILE), &manifest)?;
    Ok(GenerateStatus::Complete(Box::new(manifest)))
}

/// Names of manifest entries whose file is missing or has changed.
pub fn verify_manifest(dir: &Path) -> Result<Vec<String>, CliError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| CliError::Data(e.to_string()))?;
    let mut bad = Vec::new();
    for (name, digest) in &manifest.files {
        if file_digest(&dir.join(name)).ok().as_ref() != Some(digest) {
            bad.push(name.clone());
        }
    }
    Ok(bad)
}

fn input_or(cfg: &PipelineConfig, input: Option<&Path>) -> PathBuf {
    input.map_or_else(|| cfg.out.join(SYNTHETIC_FILE), Path::to_path_buf)
}

/// Mine BM25 hard negatives for the top-label examples of `input`.
pub fn cmd_negatives(cfg: &PipelineConfig, input: Option<&Path>) -> Result<usize, CliError> {
    let labels = cfg.labels.resolve()?;
    let relevant: Vec<SyntheticExample> = read_examples(&input_or(cfg, input))?
        .into_iter()
        .filter(|e| e.is_retained() && e.label.name == labels.top().name)
        .collect();
    let corpus = load_collection(cfg)?;
    let index = index_for(cfg, &corpus)?;
    let mined = mine_hard_negatives(&index, &relevant, cfg.negatives_per_query, labels.bottom());
    create_dir(&cfg.out)?;
    write_jsonl(&cfg.out.join(NEGATIVES_FILE), &mined)?;
    Ok(mined.len())
}

/// Build and save the BM25 index of the full corpus.
pub fn cmd_index(cfg: &PipelineConfig) -> Result<usize, CliError> {
    let corpus = load_collection(cfg)?;
    let index = build_index(&corpus, cfg.bm25)?;
    create_dir(&cfg.out)?;
    index.save(cfg.out.join(INDEX_FILE))?;
    Ok(index.doc_count())
}

/// Retained examples split into (train, validation) by the configured
/// validation size.
fn split_examples(cfg: &PipelineConfig, input: Option<&Path>) -> Result<(Vec<SyntheticExample>, Vec<SyntheticExample>), CliError> {
    let examples: Vec<SyntheticExample> =
        read_examples(&input_or(cfg, input))?.into_iter().filter(|e| e.is_retained()).collect();
    if cfg.validation_size == 0 {
        return Ok((examples, Vec::new()));
    }
    let sample = sample_validation(
        &examples,
        cfg.validation_size,
        derive_seed(cfg.seed, "validation"),
        cfg.train.positive_min_rank,
    );
    if sample.shortage {
        eprintln!(
            "warning: validation sample short of {} per label ({} positive, {} negative)",
            cfg.validation_size / 2,
            sample.positives,
            sample.negatives
        );
    }
    let held: BTreeSet<(&str, &str)> = sample.examples.iter().map(|e| (e.query.as_str(), e.doc_id.as_str())).collect();
    let train = examples
        .iter()
        .filter(|e| !held.contains(&(e.query.as_str(), e.doc_id.as_str())))
        .cloned()
        .collect();
    Ok((train, sample.examples))
}

/// Train the linear baseline on retained examples.
pub fn cmd_train(cfg: &PipelineConfig, input: Option<&Path>) -> Result<TrainReport, CliError> {
    let (train, validation) = split_examples(cfg, input)?;
    let corpus = load_collection(cfg)?;
    let docs = corpus.by_id();
    let mut hp = cfg.train.clone();
    hp.seed = derive_seed(cfg.seed, "train");
    let data = prepare(&train, &docs, hp.positive_min_rank)?;
    let val = if validation.is_empty() {
        None
    } else {
        Some(prepare(&validation, &docs, hp.positive_min_rank)?)
    };
    let (model, report) = train_features(&data, val.as_deref(), &hp)?;
    create_dir(&cfg.out)?;
    model.save(cfg.out.join(MODEL_FILE))?;
    write_json(&cfg.out.join(TRAIN_REPORT_FILE), &report)?;
    Ok(report)
}

/// Export retained examples with document text for external trainers.
pub fn cmd_export(cfg: &PipelineConfig, input: Option<&Path>) -> Result<(usize, usize), CliError> {
    let (train, validation) = split_examples(cfg, input)?;
    let corpus = load_collection(cfg)?;
    let docs = corpus.by_id();
    create_dir(&cfg.out)?;
    for (name, set) in [(EXPORT_FILE, &train), (VALIDATION_EXPORT_FILE, &validation)] {
        if name == VALIDATION_EXPORT_FILE && set.is_empty() {
            continue;
        }
        let path = cfg.out.join(name);
        let mut out = BufWriter::new(File::create(&path).map_err(|e| CliError::io(&path, e))?);
        export_training_data(set, &docs, &mut out)?;
        out.flush().map_err(|e| CliError::io(&path, e))?;
    }
    Ok((train.len(), validation.len()))
}

/// Rank the evaluation pool with a scorer and compute NDCG@k under both
/// gains. Without judged negatives the pool is BM25 top-k plus gold.
pub fn cmd_evaluate(
    cfg: &PipelineConfig,
    scorer: Option<ScorerKind>,
    model_path: Option<&Path>,
) -> Result<Vec<NdcgReport>, CliError> {
    let qrels_path = cfg.qrels.as_ref().ok_or(CliError::MissingQrels)?;
    let queries_path = cfg
        .queries
        .as_ref()
        .ok_or_else(|| CliError::Config("evaluation needs a queries file".into()))?;
    let qrels = load_qrels(qrels_path)?;
    if qrels.is_empty() {
        return Err(CliError::MissingQrels);
    }
    let queries = load_queries(queries_path)?;
    let corpus = load_collection(cfg)?;
    let docs = corpus.by_id();
    let index = index_for(cfg, &corpus)?;
    let pool = if cfg.eval.gold_negatives {
        judged_pool(&qrels)
    } else {
        augment_eval_pool(&index, &queries, &qrels, cfg.eval.pool_depth)?
    };

    let kind = scorer.unwrap_or(cfg.eval.scorer);
    let run = match kind {
        ScorerKind::Bm25 => rank_with_scorer(|q, d: &Document| Ok(index.score_doc(q, &d.id)), &pool, &queries, &docs)?,
        ScorerKind::Baseline => {
            let path = model_path
                .map(Path::to_path_buf)
                .or_else(|| cfg.eval.model.clone())
                .unwrap_or_else(|| cfg.out.join(MODEL_FILE));
            let model = PointwiseModel::load(&path)?;
            rank_with_scorer(|q, d: &Document| Ok(predict_relevance(&model, q, d)), &pool, &queries, &docs)?
        }
        ScorerKind::Random => {
            let seed = derive_seed(cfg.seed, "random-scorer");
            rank_with_scorer(|q, d: &Document| Ok(random_score(seed, q, &d.id)), &pool, &queries, &docs)?
        }
        ScorerKind::Oracle => {
            let by_text: BTreeMap<&str, &str> = queries.iter().map(|q| (q.text.as_str(), q.id.as_str())).collect();
            rank_with_scorer(
                |q, d: &Document| {
                    let qid = by_text.get(q).ok_or_else(|| "query text not found".to_string())?;
                    Ok(f64::from(qrels.grade(qid, &d.id).unwrap_or(0)))
                },
                &pool,
                &queries,
                &docs,
            )?
        }
    };

    create_dir(&cfg.out)?;
    let run_path = cfg.out.join(RUN_FILE);
    let tag = format!("{kind:?}").to_lowercase();
    let mut run_out = BufWriter::new(File::create(&run_path).map_err(|e| CliError::io(&run_path, e))?);
    write_trec_run(&run, &tag, &mut run_out).map_err(|e| CliError::io(&run_path, e))?;
    run_out.flush().map_err(|e| CliError::io(&run_path, e))?;

    let reports = [Gain::Exponential, Gain::Linear]
        .into_iter()
        .map(|gain| ndcg_at_k(&run, &qrels, NdcgConfig { k: cfg.eval.k, gain }))
        .collect::<Result<Vec<_>, _>>()?;
    let metrics_path = cfg.out.join(METRICS_FILE);
    let mut metrics = BufWriter::new(File::create(&metrics_path).map_err(|e| CliError::io(&metrics_path, e))?);
    write_report(&reports, &mut metrics).map_err(|e| CliError::io(&metrics_path, e))?;
    metrics.flush().map_err(|e| CliError::io(&metrics_path, e))?;
    Ok(reports)
}

fn read_stats(path: &Path) -> Result<StatsFile, CliError> {
    let file = if path.is_dir() {
        [STATS_FILE, MANIFEST_FILE]
            .iter()
            .map(|n| path.join(n))
            .find(|p| p.exists())
            .ok_or_else(|| CliError::MissingStats(format!("no {STATS_FILE} or {MANIFEST_FILE} in {}", path.display())))?
    } else {
        path.to_path_buf()
    };
    let text = fs::read_to_string(&file).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::MissingStats(file.display().to_string()),
        _ => CliError::io(&file, e),
    })?;
    let stats: StatsFile = serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", file.display())))?;
    if stats.stages.is_empty() {
        return Err(CliError::MissingStats(format!("{} has no stages", file.display())));
    }
    Ok(stats)
}

/// Table rows: one per stage, plus a merged row for multi-stage flows.
pub fn stats_rows(stats: &StatsFile) -> Vec<StatsRow> {
    let mut rows: Vec<StatsRow> = stats
        .stages
        .iter()
        .map(|(stage, s)| StatsRow::new(format!("{} {stage}", stats.flow), s, &stats.labels))
        .collect();
    if stats.stages.len() > 1 {
        let total = StageStats::merged(stats.stages.values());
        rows.push(StatsRow::new(format!("{} total", stats.flow), &total, &stats.labels));
    }
    rows
}

/// Render the statistics table from a stats file, a manifest, or a run
/// directory holding either.
pub fn cmd_stats(path: &Path) -> Result<String, CliError> {
    let stats = read_stats(path)?;
    for (stage, s) in &stats.stages {
        s.check().map_err(|e| CliError::Data(format!("{stage} statistics: {e}")))?;
    }
    let rows = stats_rows(&stats);
    let mut table = pairgen::synthgen::render_stats_table(&rows, &stats.labels);
    if rows.iter().any(|r| r.not_applicable) {
        table.push_str("n/a: a ratio had a zero denominator\n");
    }
    Ok(table)
}

/// Statistics table and NDCG summaries of a run directory, also written
/// to `report.txt`.
pub fn cmd_report(dir: &Path) -> Result<String, CliError> {
    let mut report = String::new();
    match cmd_stats(dir) {
        Ok(table) => {
            report.push_str("Generation statistics\n");
            report.push_str(&table);
        }
        Err(CliError::MissingStats(_)) => {}
        Err(e) => return Err(e),
    }
    let metrics = dir.join(METRICS_FILE);
    if metrics.exists() {
        let text = fs::read_to_string(&metrics).map_err(|e| CliError::io(&metrics, e))?;
        let summaries: Vec<serde_json::Value> = text
            .lines()
            .filter_map(|l| serde_json::from_str::<serde_json::Value>(l).ok())
            .filter(|v| v.get("mean_ndcg").is_some())
            .collect();
        if !summaries.is_empty() {
            if !report.is_empty() {
                report.push('\n');
            }
            report.push_str("Evaluation\n");
            for s in summaries {
                report.push_str(&format!(
                    "NDCG@{} ({}): {:.4} over {} queries, {} zero-ideal, {} unranked\n",
                    s["k"], s["gain"].as_str().unwrap_or("?"), s["mean_ndcg"].as_f64().unwrap_or(0.0),
                    s["evaluated"], s["zero_ideal"], s["missing_from_run"]
                ));
            }
        }
    }
    if report.is_empty() {
        return Err(CliError::MissingStats(format!("nothing to report in {}", dir.display())));
    }
    let path = dir.join(REPORT_FILE);
    fs::write(&path, &report).map_err(|e| CliError::io(&path, e))?;
    Ok(report)
}
