//! BM25 index for hard-negative mining and evaluation pools.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{DocumentCollection, Qrels, TestQuery};
use crate::prompting::RelevanceLabel;
use crate::synthgen::{NegativeMiner, Stage, SyntheticExample, Verdict};
use crate::text::tokenize;

const FORMAT_HEADER: &str = "pairgen-bm25\t1";

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("cannot index an empty collection")]
    EmptyCollection,
    #[error("query {0} has no text")]
    UnknownQueryId(String),
    #[error("invalid BM25 parameters: {0}")]
    Params(String),
    #[error("index file line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if !(self.k1.is_finite() && self.k1 > 0.0) {
            return Err(RetrievalError::Params(format!("k1 must be > 0, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(RetrievalError::Params(format!("b must be in [0, 1], got {}", self.b)));
        }
        Ok(())
    }
}

/// Immutable inverted index. Documents are addressed by their position in
/// `doc_ids`, which is sorted, so posting order is doc id order.
#[derive(Debug, Clone, PartialEq)]
pub struct Bm25Index {
    params: Bm25Params,
    doc_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    postings: BTreeMap<String, Vec<(u32, u32)>>,
}

pub fn build_index(collection: &DocumentCollection, params: Bm25Params) -> Result<Bm25Index, RetrievalError> {
    params.validate()?;
    if collection.is_empty() {
        return Err(RetrievalError::EmptyCollection);
    }
    let mut docs: Vec<_> = collection.iter().collect();
    docs.sort_by(|a, b| a.id.cmp(&b.id));
    let mut doc_ids = Vec::with_capacity(docs.len());
    let mut doc_lengths = Vec::with_capacity(docs.len());
    let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
    for (idx, doc) in docs.iter().enumerate() {
        let tokens = tokenize(&doc.display_text());
        let mut tf: BTreeMap<String, u32> = BTreeMap::new();
        for t in &tokens {
            *tf.entry(t.clone()).or_default() += 1;
        }
        for (term, n) in tf {
            postings.entry(term).or_default().push((idx as u32, n));
        }
        doc_ids.push(doc.id.clone());
        doc_lengths.push(tokens.len() as u32);
    }
    Ok(Bm25Index::assemble(params, doc_ids, doc_lengths, postings))
}

impl Bm25Index {
    fn assemble(
        params: Bm25Params,
        doc_ids: Vec<String>,
        doc_lengths: Vec<u32>,
        postings: BTreeMap<String, Vec<(u32, u32)>>,
    ) -> Self {
        let total: u64 = doc_lengths.iter().map(|&l| u64::from(l)).sum();
        let avg_doc_length = total as f64 / doc_lengths.len() as f64;
        Self {
            params,
            doc_ids,
            doc_lengths,
            avg_doc_length,
            postings,
        }
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_length(&self, doc_id: &str) -> Option<u32> {
        self.position(doc_id).map(|i| self.doc_lengths[i])
    }

    pub fn doc_frequency(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn term_frequency(&self, term: &str, doc_id: &str) -> u32 {
        let Some(idx) = self.position(doc_id) else { return 0 };
        self.postings
            .get(term)
            .and_then(|p| p.binary_search_by_key(&(idx as u32), |&(d, _)| d).ok().map(|i| p[i].1))
            .unwrap_or(0)
    }

    fn position(&self, doc_id: &str) -> Option<usize> {
        self.doc_ids.binary_search_by(|d| d.as_str().cmp(doc_id)).ok()
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_count() as f64;
        let df = self.doc_frequency(term) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    fn term_weight(&self, idf: f64, tf: u32, len: u32) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = f64::from(tf);
        let norm = if self.avg_doc_length > 0.0 {
            1.0 - b + b * f64::from(len) / self.avg_doc_length
        } else {
            1.0 - b
        };
        idf * tf * (k1 + 1.0) / (tf + k1 * norm)
    }

    fn query_terms(query: &str) -> BTreeSet<String> {
        tokenize(query).into_iter().collect()
    }

    /// BM25 score of one document; repeated query terms count once.
    pub fn score_doc(&self, query: &str, doc_id: &str) -> f64 {
        let Some(idx) = self.position(doc_id) else { return 0.0 };
        Self::query_terms(query)
            .iter()
            .map(|t| match self.term_frequency(t, doc_id) {
                0 => 0.0,
                tf => self.term_weight(self.idf(t), tf, self.doc_lengths[idx]),
            })
            .sum()
    }

    /// Top `k` documents with a positive score, by descending score then
    /// ascending doc id.
    pub fn search(&self, query: &str, k: usize) -> Vec<(String, f64)> {
        let mut scores: BTreeMap<u32, f64> = BTreeMap::new();
        for term in Self::query_terms(query) {
            let Some(postings) = self.postings.get(&term) else { continue };
            let idf = self.idf(&term);
            for &(idx, tf) in postings {
                *scores.entry(idx).or_default() += self.term_weight(idf, tf, self.doc_lengths[idx as usize]);
            }
        }
        let mut ranked: Vec<(u32, f64)> = scores.into_iter().filter(|&(_, s)| s > 0.0).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(k);
        ranked.into_iter().map(|(i, s)| (self.doc_ids[i as usize].clone(), s)).collect()
    }

    /// Line format: a version header, a params line, one `doc` line per
    /// document in id order, then one `term` line per term with
    /// `position:tf` postings. Fields are tab separated.
    pub fn write_to(&self, mut out: impl Write) -> io::Result<()> {
        writeln!(out, "{FORMAT_HEADER}")?;
        writeln!(out, "params\t{}\t{}\t{}", self.params.k1, self.params.b, self.doc_count())?;
        for (id, len) in self.doc_ids.iter().zip(&self.doc_lengths) {
            writeln!(out, "doc\t{id}\t{len}")?;
        }
        for (term, postings) in &self.postings {
            write!(out, "term\t{term}")?;
            for (idx, tf) in postings {
                write!(out, "\t{idx}:{tf}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("index text is UTF-8")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RetrievalError> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn read_from(input: impl BufRead) -> Result<Self, RetrievalError> {
        let mut lines = input.lines().enumerate();
        let mut next = || -> Result<Option<(usize, String)>, RetrievalError> {
            match lines.next() {
                Some((i, l)) => Ok(Some((i + 1, l?))),
                None => Ok(None),
            }
        };
        let bad = |line: usize, reason: &str| RetrievalError::Format {
            line,
            reason: reason.to_string(),
        };
        match next()? {
            Some((_, h)) if h == FORMAT_HEADER => {}
            _ => return Err(bad(1, "missing or unsupported version header")),
        }
        let (ln, params_line) = next()?.ok_or_else(|| bad(2, "missing params line"))?;
        let f: Vec<&str> = params_line.split('\t').collect();
        if f.len() != 4 || f[0] != "params" {
            return Err(bad(ln, "expected params line"));
        }
        let params = Bm25Params {
            k1: f[1].parse().map_err(|_| bad(ln, "bad k1"))?,
            b: f[2].parse().map_err(|_| bad(ln, "bad b"))?,
        };
        params.validate()?;
        let n: usize = f[3].parse().map_err(|_| bad(ln, "bad document count"))?;
        if n == 0 {
            return Err(RetrievalError::EmptyCollection);
        }

        let mut doc_ids = Vec::with_capacity(n);
        let mut doc_lengths = Vec::with_capacity(n);
        for _ in 0..n {
            let (ln, line) = next()?.ok_or_else(|| bad(0, "truncated document table"))?;
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 || f[0] != "doc" {
                return Err(bad(ln, "expected doc line"));
            }
            if doc_ids.last().is_some_and(|prev: &String| prev.as_str() >= f[1]) {
                return Err(bad(ln, "doc ids not strictly ascending"));
            }
            doc_ids.push(f[1].to_string());
            doc_lengths.push(f[2].parse().map_err(|_| bad(ln, "bad doc length"))?);
        }

        let mut postings = BTreeMap::new();
        while let Some((ln, line)) = next()? {
            let mut f = line.split('\t');
            if f.next() != Some("term") {
                return Err(bad(ln, "expected term line"));
            }
            let term = f.next().ok_or_else(|| bad(ln, "missing term"))?.to_string();
            let mut list: Vec<(u32, u32)> = Vec::new();
            for p in f {
                let (idx, tf) = p.split_once(':').ok_or_else(|| bad(ln, "bad posting"))?;
                let idx: u32 = idx.parse().map_err(|_| bad(ln, "bad posting position"))?;
                let tf: u32 = tf.parse().map_err(|_| bad(ln, "bad term frequency"))?;
                if idx as usize >= n || list.last().is_some_and(|&(prev, _)| prev >= idx) || tf == 0 {
                    return Err(bad(ln, "postings out of range or unsorted"));
                }
                list.push((idx, tf));
            }
            postings.insert(term, list);
        }
        Ok(Self::assemble(params, doc_ids, doc_lengths, postings))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RetrievalError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

/// For each relevant example, the top retrieved documents other than its
/// source, labelled `negative_label`.
pub fn mine_hard_negatives(
    index: &Bm25Index,
    relevant: &[SyntheticExample],
    per_query: usize,
    negative_label: &RelevanceLabel,
) -> Vec<SyntheticExample> {
    let mut out = Vec::new();
    if per_query == 0 {
        return out;
    }
    for ex in relevant {
        let hits = index.search(&ex.query, per_query + 1);
        out.extend(
            hits.into_iter()
                .filter(|(d, _)| *d != ex.doc_id)
                .take(per_query)
                .map(|(doc_id, _)| SyntheticExample {
                    query: ex.query.clone(),
                    doc_id,
                    label: negative_label.clone(),
                    variant: ex.variant.clone(),
                    verdict: Verdict::Retained,
                    stage: Stage::MinedNegative,
                }),
        );
    }
    out
}

pub struct HardNegativeMiner<'a> {
    pub index: &'a Bm25Index,
}

impl NegativeMiner for HardNegativeMiner<'_> {
    fn mine(&self, relevant: &[SyntheticExample], per_query: usize, negative_label: &RelevanceLabel) -> Vec<SyntheticExample> {
        mine_hard_negatives(self.index, relevant, per_query, negative_label)
    }
}

/// Documents to rank per query, with grades (0 when unjudged). Doc ids
/// within a query are unique and ascending.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalPool {
    queries: BTreeMap<String, Vec<(String, u32)>>,
}

impl EvalPool {
    pub fn get(&self, query_id: &str) -> Option<&[(String, u32)]> {
        self.queries.get(query_id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[(String, u32)])> {
        self.queries.iter().map(|(q, v)| (q.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    /// Total (query, document) pairs.
    pub fn pair_count(&self) -> usize {
        self.queries.values().map(Vec::len).sum()
    }
}

/// Top-`k` BM25 hits merged with every judged document, per judged query.
pub fn augment_eval_pool(
    index: &Bm25Index,
    queries: &[TestQuery],
    qrels: &Qrels,
    k: usize,
) -> Result<EvalPool, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::Params("pool depth k must be >= 1".into()));
    }
    let texts: BTreeMap<&str, &str> = queries.iter().map(|q| (q.id.as_str(), q.text.as_str())).collect();
    let mut pool = EvalPool::default();
    for qid in qrels.query_ids() {
        let text = texts.get(qid).ok_or_else(|| RetrievalError::UnknownQueryId(qid.to_string()))?;
        let judged = qrels.for_query(qid);
        let mut docs: BTreeMap<String, u32> = judged.cloned().unwrap_or_default();
        for (doc, _) in index.search(text, k) {
            docs.entry(doc).or_insert(0);
        }
        pool.queries.insert(qid.to_string(), docs.into_iter().collect());
    }
    Ok(pool)
}

/// Judged documents only, for datasets whose qrels carry negatives.
pub fn judged_pool(qrels: &Qrels) -> EvalPool {
    let queries = qrels
        .query_ids()
        .map(|q| {
            let docs = qrels.for_query(q).map(|m| m.iter().map(|(d, g)| (d.clone(), *g)).collect()).unwrap_or_default();
            (q.to_string(), docs)
        })
        .collect();
    EvalPool { queries }
}
