//! BEIR-style corpus, query and qrels ingestion plus deterministic sampling.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::text::SplitMix64;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {0}: missing required field")]
    MissingField(usize),
    #[error("line {0}: malformed record")]
    MalformedRecord(usize),
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("line {0}: expected query-id<TAB>corpus-id<TAB>score")]
    MalformedLine(usize),
    #[error("line {0}: negative grade")]
    NegativeGrade(usize),
    #[error("duplicate judgment for ({0}, {1})")]
    DuplicateJudgment(String, String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CorpusError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: Option<String>,
    pub text: String,
}

impl Document {
    /// Builds a document, treating an empty title as absent.
    pub fn new(id: impl Into<String>, title: Option<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            title: title.filter(|t| !t.trim().is_empty()),
            text: text.into(),
        }
    }

    /// `"title. text"` when a title is present, otherwise the bare text.
    pub fn display_text(&self) -> String {
        match &self.title {
            Some(title) => format!("{title}. {}", self.text),
            None => self.text.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocumentCollection {
    pub documents: Vec<Document>,
    pub source_path: String,
    pub sample_seed: Option<u64>,
}

impl DocumentCollection {
    pub fn new(documents: Vec<Document>, source_path: impl Into<String>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::with_capacity(documents.len());
        for doc in &documents {
            if !seen.insert(doc.id.as_str()) {
                return Err(CorpusError::DuplicateId(doc.id.clone()));
            }
        }
        Ok(Self {
            documents,
            source_path: source_path.into(),
            sample_seed: None,
        })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Document> {
        self.documents.iter()
    }

    /// id → document lookup table.
    pub fn by_id(&self) -> BTreeMap<&str, &Document> {
        self.documents.iter().map(|d| (d.id.as_str(), d)).collect()
    }
}

/// Result of loading a corpus: the valid documents plus one error per
/// rejected line.
#[derive(Debug)]
pub struct CorpusLoad {
    pub collection: DocumentCollection,
    pub line_errors: Vec<CorpusError>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestQuery {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: &str, doc_id: &str, grade: u32) -> Result<(), CorpusError> {
        let per_query = self.judgments.entry(query_id.to_string()).or_default();
        if per_query.contains_key(doc_id) {
            return Err(CorpusError::DuplicateJudgment(
                query_id.to_string(),
                doc_id.to_string(),
            ));
        }
        per_query.insert(doc_id.to_string(), grade);
        Ok(())
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> Option<u32> {
        self.judgments.get(query_id)?.get(doc_id).copied()
    }

    /// Judged documents of one query, ordered by doc id.
    pub fn for_query(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(query_id)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.judgments.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, u32)> {
        self.judgments.iter().flat_map(|(q, docs)| {
            docs.iter().map(move |(d, g)| (q.as_str(), d.as_str(), *g))
        })
    }
}

fn open_lines(path: &Path) -> Result<impl Iterator<Item = (usize, std::io::Result<String>)>, CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    Ok(BufReader::new(file)
        .lines()
        .enumerate()
        .map(|(i, line)| (i + 1, line)))
}

fn required_str(record: &serde_json::Map<String, Value>, key: &str, line_no: usize) -> Result<String, CorpusError> {
    match record.get(key) {
        None | Some(Value::Null) => Err(CorpusError::MissingField(line_no)),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(Value::Number(n)) => Ok(n.to_string()),
        Some(_) => Err(CorpusError::MalformedRecord(line_no)),
    }
}

fn parse_record(line: &str, line_no: usize) -> Result<serde_json::Map<String, Value>, CorpusError> {
    match serde_json::from_str::<Value>(line) {
        Ok(Value::Object(map)) => Ok(map),
        _ => Err(CorpusError::MalformedRecord(line_no)),
    }
}

/// Load a line-delimited corpus with keys `_id`, `title` (optional), `text`.
///
/// Bad lines are reported in [`CorpusLoad::line_errors`] and skipped; a
/// duplicated `_id` aborts the load.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<CorpusLoad, CorpusError> {
    let path = path.as_ref();
    let mut documents = Vec::new();
    let mut line_errors = Vec::new();
    let mut seen = HashSet::new();
    for (line_no, line) in open_lines(path)? {
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = parse_record(&line, line_no).and_then(|record| {
            let id = required_str(&record, "_id", line_no)?;
            let text = required_str(&record, "text", line_no)?;
            let title = match record.get("title") {
                None | Some(Value::Null) => None,
                Some(Value::String(s)) => Some(s.clone()),
                Some(_) => return Err(CorpusError::MalformedRecord(line_no)),
            };
            if id.is_empty() {
                return Err(CorpusError::MissingField(line_no));
            }
            Ok(Document::new(id, title, text))
        });
        match parsed {
            Ok(doc) => {
                if !seen.insert(doc.id.clone()) {
                    return Err(CorpusError::DuplicateId(doc.id));
                }
                documents.push(doc);
            }
            Err(e) => line_errors.push(e),
        }
    }
    Ok(CorpusLoad {
        collection: DocumentCollection {
            documents,
            source_path: path.display().to_string(),
            sample_seed: None,
        },
        line_errors,
    })
}

/// Write documents back in the corpus format, one record per line.
pub fn write_corpus(path: impl AsRef<Path>, documents: &[Document]) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for doc in documents {
        let record = serde_json::json!({
            "_id": doc.id,
            "title": doc.title.as_deref().unwrap_or(""),
            "text": doc.text,
        });
        writeln!(out, "{record}").map_err(|e| CorpusError::io(path, e))?;
    }
    out.flush().map_err(|e| CorpusError::io(path, e))
}

/// Load a line-delimited query file with keys `_id` and `text`.
pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<TestQuery>, CorpusError> {
    let path = path.as_ref();
    let mut queries = Vec::new();
    let mut seen = HashSet::new();
    for (line_no, line) in open_lines(path)? {
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_record(&line, line_no)?;
        let id = required_str(&record, "_id", line_no)?;
        let text = required_str(&record, "text", line_no)?;
        if !seen.insert(id.clone()) {
            return Err(CorpusError::DuplicateId(id));
        }
        queries.push(TestQuery { id, text });
    }
    Ok(queries)
}

const QRELS_HEADER: &str = "query-id\tcorpus-id\tscore";

/// Load a TSV qrels file. A single leading header line is skipped.
pub fn load_qrels(path: impl AsRef<Path>) -> Result<Qrels, CorpusError> {
    let path = path.as_ref();
    let mut qrels = Qrels::new();
    for (line_no, line) in open_lines(path)? {
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || (line_no == 1 && line == QRELS_HEADER) {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 || cols[0].is_empty() || cols[1].is_empty() {
            return Err(CorpusError::MalformedLine(line_no));
        }
        let grade: i64 = cols[2]
            .trim()
            .parse()
            .map_err(|_| CorpusError::MalformedLine(line_no))?;
        if grade < 0 {
            return Err(CorpusError::NegativeGrade(line_no));
        }
        let grade = u32::try_from(grade).map_err(|_| CorpusError::MalformedLine(line_no))?;
        qrels.insert(cols[0], cols[1], grade)?;
    }
    Ok(qrels)
}

pub fn write_qrels(path: impl AsRef<Path>, qrels: &Qrels) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "{QRELS_HEADER}").map_err(|e| CorpusError::io(path, e))?;
    for (q, d, g) in qrels.iter() {
        writeln!(out, "{q}\t{d}\t{g}").map_err(|e| CorpusError::io(path, e))?;
    }
    out.flush().map_err(|e| CorpusError::io(path, e))
}

/// Draw `min(n, |collection|)` documents without replacement.
///
/// Ids are sorted lexicographically before a partial Fisher–Yates pass
/// driven by SplitMix64, so the result depends only on the id set, `n` and
/// `seed`. The output is sorted by id.
pub fn sample_documents(collection: &DocumentCollection, n: usize, seed: u64) -> DocumentCollection {
    let mut docs: Vec<&Document> = collection.documents.iter().collect();
    docs.sort_by(|a, b| a.id.cmp(&b.id));
    let take = n.min(docs.len());
    SplitMix64::new(seed).partial_shuffle(&mut docs, take);
    let mut sampled: Vec<Document> = docs[..take].iter().map(|d| (*d).clone()).collect();
    sampled.sort_by(|a, b| a.id.cmp(&b.id));
    DocumentCollection {
        documents: sampled,
        source_path: collection.source_path.clone(),
        sample_seed: Some(seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn synthetic_collection(n: usize) -> DocumentCollection {
        let docs = (0..n)
            .map(|i| Document::new(format!("doc{i:05}"), None, format!("text {i}")))
            .collect();
        DocumentCollection::new(docs, "mem").unwrap()
    }

    #[test]
    fn loads_three_line_fixture() {
        let f = write_tmp(
            "{\"_id\":\"a\",\"title\":\"T\",\"text\":\"one\"}\n\
             {\"_id\":\"b\",\"title\":\"\",\"text\":\"two\"}\n\
             {\"_id\":\"c\",\"text\":\"three\"}\n",
        );
        let load = load_corpus(f.path()).unwrap();
        assert!(load.line_errors.is_empty());
        let ids: Vec<_> = load.collection.iter().map(|d| d.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(load.collection.documents[0].title.as_deref(), Some("T"));
        assert_eq!(load.collection.documents[1].title, None);
    }

    #[test]
    fn duplicate_id_names_the_id() {
        let f = write_tmp(
            "{\"_id\":\"a\",\"text\":\"1\"}\n{\"_id\":\"dup\",\"text\":\"2\"}\n\
             {\"_id\":\"c\",\"text\":\"3\"}\n{\"_id\":\"d\",\"text\":\"4\"}\n\
             {\"_id\":\"dup\",\"text\":\"5\"}\n",
        );
        match load_corpus(f.path()) {
            Err(CorpusError::DuplicateId(id)) => assert_eq!(id, "dup"),
            other => panic!("expected DuplicateId, got {other:?}"),
        }
    }

    #[test]
    fn missing_text_is_a_line_error() {
        let f = write_tmp(
            "{\"_id\":\"a\",\"text\":\"1\"}\n{\"_id\":\"b\",\"title\":\"x\"}\n\
             {\"_id\":\"c\",\"text\":\"3\"}\nnot json\n",
        );
        let load = load_corpus(f.path()).unwrap();
        assert_eq!(load.collection.len(), 2);
        assert!(load.collection.iter().all(|d| d.id != "b"));
        assert!(matches!(load.line_errors[0], CorpusError::MissingField(2)));
        assert!(matches!(load.line_errors[1], CorpusError::MalformedRecord(4)));
    }

    #[test]
    fn qrels_parse_and_errors() {
        let f = write_tmp("query-id\tcorpus-id\tscore\nq1\td7\t2\nq1\td8\t0\n");
        let qrels = load_qrels(f.path()).unwrap();
        assert_eq!(qrels.grade("q1", "d7"), Some(2));
        assert_eq!(qrels.len(), 2);

        let f = write_tmp("q1\td7\t-1\n");
        assert!(matches!(load_qrels(f.path()), Err(CorpusError::NegativeGrade(1))));

        let f = write_tmp("q1\td7\n");
        assert!(matches!(load_qrels(f.path()), Err(CorpusError::MalformedLine(1))));

        let f = write_tmp("q1\td1\t1\nq1\td2\t0\nq2\td1\t2\nq2\td3\t1\nq1\td2\t1\n");
        match load_qrels(f.path()) {
            Err(CorpusError::DuplicateJudgment(q, d)) => assert_eq!((q.as_str(), d.as_str()), ("q1", "d2")),
            other => panic!("expected DuplicateJudgment, got {other:?}"),
        }
    }

    #[test]
    fn oversized_sample_returns_everything() {
        let c = synthetic_collection(400);
        let s = sample_documents(&c, 50_000, 3);
        assert_eq!(s.len(), 400);
        assert_eq!(s.sample_seed, Some(3));
    }

    #[test]
    fn sampling_is_deterministic_and_seed_sensitive() {
        let c = synthetic_collection(1000);
        let a = sample_documents(&c, 100, 1);
        let b = sample_documents(&c, 100, 1);
        assert_eq!(a, b);
        let other = sample_documents(&c, 100, 2);

        let universe: BTreeSet<_> = c.iter().map(|d| d.id.clone()).collect();
        let a_ids: BTreeSet<_> = a.iter().map(|d| d.id.clone()).collect();
        let o_ids: BTreeSet<_> = other.iter().map(|d| d.id.clone()).collect();
        assert_eq!(a_ids.len(), 100);
        assert!(a_ids.is_subset(&universe) && o_ids.is_subset(&universe));
        assert!(a_ids.intersection(&o_ids).count() < 100);
        let sorted: Vec<_> = a.iter().map(|d| d.id.clone()).collect();
        assert!(sorted.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn corpus_round_trip() {
        let docs = vec![
            Document::new("x", Some("Title".into()), "body\twith tab"),
            Document::new("y", None, "plain"),
        ];
        let f = tempfile::NamedTempFile::new().unwrap();
        write_corpus(f.path(), &docs).unwrap();
        let back = load_corpus(f.path()).unwrap();
        assert_eq!(back.collection.documents, docs);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn sample_ignores_input_order(n_docs in 1usize..60, n in 1usize..80, seed: u64, rot in 0usize..60) {
                let c = synthetic_collection(n_docs);
                let mut shuffled = c.documents.clone();
                shuffled.rotate_left(rot % n_docs);
                shuffled.reverse();
                let c2 = DocumentCollection::new(shuffled, "mem").unwrap();
                let a = sample_documents(&c, n, seed);
                let b = sample_documents(&c2, n, seed);
                prop_assert_eq!(a.len(), n.min(n_docs));
                prop_assert_eq!(a.documents, b.documents);
            }
        }
    }
}
