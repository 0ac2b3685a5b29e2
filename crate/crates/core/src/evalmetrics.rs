//! Ranked runs, NDCG@k and TREC run files.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Document, Qrels, TestQuery};
use crate::retrieval::EvalPool;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("run contains no queries")]
    EmptyRun,
    #[error("scorer failed on query {query_id}, document {doc_id}: {reason}")]
    ScorerFailure {
        query_id: String,
        doc_id: String,
        reason: String,
    },
    #[error("no text for query {0}")]
    UnknownQuery(String),
    #[error("document {doc_id} listed twice for query {query_id}")]
    DuplicateDocument { query_id: String, doc_id: String },
    #[error("non-finite score for query {query_id}, document {doc_id}")]
    NonFiniteScore { query_id: String, doc_id: String },
    #[error("run file line {line}: {reason}")]
    MalformedRun { line: usize, reason: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gain {
    /// `2^r - 1`.
    #[default]
    Exponential,
    /// `r`.
    Linear,
}

impl Gain {
    pub fn value(self, grade: u32) -> f64 {
        match self {
            Gain::Exponential => 2f64.powi(grade as i32) - 1.0,
            Gain::Linear => f64::from(grade),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Gain::Exponential => "exponential",
            Gain::Linear => "linear",
        }
    }
}

impl fmt::Display for Gain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Gain {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exponential" => Ok(Gain::Exponential),
            "linear" => Ok(Gain::Linear),
            other => Err(EvalError::Config(format!("unknown gain {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NdcgConfig {
    pub k: usize,
    pub gain: Gain,
}

impl Default for NdcgConfig {
    fn default() -> Self {
        Self {
            k: 10,
            gain: Gain::Exponential,
        }
    }
}

/// Per-query ranked lists: descending score, ties by ascending doc id, no
/// repeated documents.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RankedRun {
    queries: BTreeMap<String, Vec<(String, f64)>>,
}

fn rank_order(a: &(String, f64), b: &(String, f64)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

impl RankedRun {
    pub fn new() -> Self {
        Self::default()
    }

    /// Set the ranking for a query from unordered (doc, score) pairs.
    pub fn insert(&mut self, query_id: &str, mut scored: Vec<(String, f64)>) -> Result<(), EvalError> {
        let mut seen = BTreeSet::new();
        for (doc, score) in &scored {
            if !score.is_finite() {
                return Err(EvalError::NonFiniteScore {
                    query_id: query_id.to_string(),
                    doc_id: doc.clone(),
                });
            }
            if !seen.insert(doc.as_str()) {
                return Err(EvalError::DuplicateDocument {
                    query_id: query_id.to_string(),
                    doc_id: doc.clone(),
                });
            }
        }
        scored.sort_by(rank_order);
        self.queries.insert(query_id.to_string(), scored);
        Ok(())
    }

    pub fn get(&self, query_id: &str) -> Option<&[(String, f64)]> {
        self.queries.get(query_id).map(Vec::as_slice)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.queries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[(String, f64)])> {
        self.queries.iter().map(|(q, v)| (q.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NdcgReport {
    pub per_query: BTreeMap<String, f64>,
    pub mean: f64,
    pub k: usize,
    pub gain: Gain,
    /// Queries whose judged grades are all zero; they score 0.
    pub zero_ideal: BTreeSet<String>,
    /// Judged queries the run does not rank; they score 0.
    pub missing_from_run: BTreeSet<String>,
}

impl NdcgReport {
    pub fn evaluated(&self) -> usize {
        self.per_query.len()
    }
}

/// DCG of a grade sequence cut at `k`, discount `log2(i + 1)` from rank 1.
pub fn dcg(grades: &[u32], k: usize, gain: Gain) -> f64 {
    grades
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain.value(g) / ((i + 2) as f64).log2())
        .sum()
}

/// NDCG for one ranking against one query's judgments. Returns `None` when
/// the ideal DCG is zero.
pub fn ndcg_query(ranked: &[String], judged: Option<&BTreeMap<String, u32>>, cfg: NdcgConfig) -> Option<f64> {
    let grade = |d: &String| judged.and_then(|j| j.get(d)).copied().unwrap_or(0);
    let grades: Vec<u32> = ranked.iter().map(grade).collect();
    let mut ideal: Vec<u32> = judged.map(|j| j.values().copied().collect()).unwrap_or_default();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg(&ideal, cfg.k, cfg.gain);
    if idcg == 0.0 {
        return None;
    }
    Some(dcg(&grades, cfg.k, cfg.gain) / idcg)
}

/// NDCG@k per query and the unweighted mean over every query that is
/// either ranked or judged. Unranked and zero-ideal queries score 0.
pub fn ndcg_at_k(run: &RankedRun, qrels: &Qrels, cfg: NdcgConfig) -> Result<NdcgReport, EvalError> {
    if cfg.k == 0 {
        return Err(EvalError::Config("k must be >= 1".into()));
    }
    if run.is_empty() {
        return Err(EvalError::EmptyRun);
    }
    let ids: BTreeSet<&str> = run.query_ids().chain(qrels.query_ids()).collect();
    let mut report = NdcgReport {
        per_query: BTreeMap::new(),
        mean: 0.0,
        k: cfg.k,
        gain: cfg.gain,
        zero_ideal: BTreeSet::new(),
        missing_from_run: BTreeSet::new(),
    };
    for q in ids {
        let judged = qrels.for_query(q);
        let ranked: Vec<String> = match run.get(q) {
            Some(r) => r.iter().map(|(d, _)| d.clone()).collect(),
            None => {
                report.missing_from_run.insert(q.to_string());
                Vec::new()
            }
        };
        let value = match ndcg_query(&ranked, judged, cfg) {
            Some(v) => v,
            None => {
                report.zero_ideal.insert(q.to_string());
                0.0
            }
        };
        report.per_query.insert(q.to_string(), value);
    }
    report.mean = report.per_query.values().sum::<f64>() / report.per_query.len() as f64;
    Ok(report)
}

/// Score every pooled document of every pooled query and rank them.
pub fn rank_with_scorer<F>(
    scorer: F,
    pool: &EvalPool,
    queries: &[TestQuery],
    docs: &BTreeMap<&str, &Document>,
) -> Result<RankedRun, EvalError>
where
    F: Fn(&str, &Document) -> Result<f64, String>,
{
    let texts: BTreeMap<&str, &str> = queries.iter().map(|q| (q.id.as_str(), q.text.as_str())).collect();
    let mut run = RankedRun::new();
    for (qid, entries) in pool.iter() {
        let text = texts.get(qid).ok_or_else(|| EvalError::UnknownQuery(qid.to_string()))?;
        let mut scored = Vec::with_capacity(entries.len());
        for (doc_id, _) in entries {
            let failure = |reason: String| EvalError::ScorerFailure {
                query_id: qid.to_string(),
                doc_id: doc_id.clone(),
                reason,
            };
            let doc = docs.get(doc_id.as_str()).ok_or_else(|| failure("document not in corpus".into()))?;
            let score = scorer(text, doc).map_err(failure)?;
            if !score.is_finite() {
                return Err(failure(format!("non-finite score {score}")));
            }
            scored.push((doc_id.clone(), score));
        }
        run.insert(qid, scored)?;
    }
    Ok(run)
}

/// `qid Q0 docid rank score tag`, ranks from 1.
pub fn write_trec_run(run: &RankedRun, tag: &str, mut out: impl Write) -> io::Result<()> {
    for (qid, ranked) in run.iter() {
        for (i, (doc, score)) in ranked.iter().enumerate() {
            writeln!(out, "{qid} Q0 {doc} {} {score} {tag}", i + 1)?;
        }
    }
    Ok(())
}

pub fn read_trec_run(path: impl AsRef<Path>) -> Result<RankedRun, EvalError> {
    let reader = BufReader::new(File::open(path)?);
    let mut by_query: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: &str| EvalError::MalformedRun {
            line: i + 1,
            reason: reason.to_string(),
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(bad("expected 6 fields"));
        }
        let score: f64 = fields[4].parse().map_err(|_| bad("score is not a number"))?;
        by_query
            .entry(fields[0].to_string())
            .or_default()
            .push((fields[2].to_string(), score));
    }
    let mut run = RankedRun::new();
    for (q, scored) in by_query {
        run.insert(&q, scored)?;
    }
    Ok(run)
}

/// One JSON line per query and report, then one summary line per report.
pub fn write_report(reports: &[NdcgReport], mut out: impl Write) -> io::Result<()> {
    for r in reports {
        let key = format!("ndcg@{}", r.k);
        for (q, v) in &r.per_query {
            let mut line = serde_json::Map::new();
            line.insert("query_id".into(), q.clone().into());
            line.insert(key.clone(), (*v).into());
            line.insert("gain".into(), r.gain.as_str().into());
            writeln!(out, "{}", serde_json::Value::Object(line))?;
        }
    }
    for r in reports {
        let summary = serde_json::json!({
            "mean_ndcg": r.mean,
            "k": r.k,
            "gain": r.gain.as_str(),
            "evaluated": r.evaluated(),
            "zero_ideal": r.zero_ideal.len(),
            "missing_from_run": r.missing_from_run.len(),
        });
        writeln!(out, "{summary}")?;
    }
    Ok(())
}
