//! Pointwise logistic-regression relevance baseline over hashed lexical
//! features, plus training-data export.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Document;
use crate::prompting::{QGenVariant, RelevanceLabel};
use crate::synthgen::{Stage, SyntheticExample, Verdict};
use crate::text::{derive_seed, fnv1a64, fnv1a64_extend, tokenize, SplitMix64};

/// Size of the shared hashed term space.
pub const HASH_DIM: usize = 1 << 20;
/// Jaccard, query coverage, doc coverage, length ratio.
pub const DENSE_FEATURES: usize = 4;
pub const DIMENSION: usize = HASH_DIM + DENSE_FEATURES;

const MODEL_HEADER: &str = "pairgen-linear\t1";

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("training data has only one class")]
    SingleClassData,
    #[error("loss became non-finite at epoch {0}")]
    NonFiniteLoss(usize),
    #[error("document {0} not found")]
    MissingDocument(String),
    #[error("invalid hyperparameters: {0}")]
    Config(String),
    #[error("model file line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("export line {line}: {source}")]
    Import { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Hash namespaces for unigram features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Namespace {
    Query,
    Doc,
    Overlap,
}

impl Namespace {
    fn tag(self) -> &'static [u8] {
        match self {
            Namespace::Query => b"q\x1f",
            Namespace::Doc => b"d\x1f",
            Namespace::Overlap => b"x\x1f",
        }
    }

    pub fn index(self, term: &str) -> u32 {
        (fnv1a64_extend(fnv1a64(self.tag()), term.as_bytes()) % HASH_DIM as u64) as u32
    }
}

/// Sparse features, sorted by index, collisions summed.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    entries: Vec<(u32, f64)>,
}

impl FeatureVector {
    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn get(&self, index: u32) -> f64 {
        self.entries
            .binary_search_by_key(&index, |&(i, _)| i)
            .map_or(0.0, |p| self.entries[p].1)
    }

    pub fn dense(&self) -> [f64; DENSE_FEATURES] {
        std::array::from_fn(|i| self.get((HASH_DIM + i) as u32))
    }
}

/// Each namespace is L2-normalised over its distinct terms so long
/// documents do not swamp the dense features.
pub fn featurize(query: &str, doc: &Document) -> FeatureVector {
    let q_tokens = tokenize(query);
    let d_tokens = tokenize(&doc.display_text());
    let q: BTreeSet<&str> = q_tokens.iter().map(String::as_str).collect();
    let d: BTreeSet<&str> = d_tokens.iter().map(String::as_str).collect();
    let both: BTreeSet<&str> = q.intersection(&d).copied().collect();

    let mut acc: BTreeMap<u32, f64> = BTreeMap::new();
    for (ns, terms) in [(Namespace::Query, &q), (Namespace::Doc, &d), (Namespace::Overlap, &both)] {
        if terms.is_empty() {
            continue;
        }
        let value = 1.0 / (terms.len() as f64).sqrt();
        for t in terms.iter() {
            *acc.entry(ns.index(t)).or_default() += value;
        }
    }

    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let union = q.len() + d.len() - both.len();
    let (short, long) = (q_tokens.len().min(d_tokens.len()), q_tokens.len().max(d_tokens.len()));
    let dense = [
        ratio(both.len(), union),
        ratio(both.len(), q.len()),
        ratio(both.len(), d.len()),
        ratio(short, long),
    ];
    for (i, v) in dense.into_iter().enumerate() {
        if v != 0.0 {
            acc.insert((HASH_DIM + i) as u32, v);
        }
    }
    FeatureVector {
        entries: acc.into_iter().collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
    pub seed: u64,
    /// Labels ranked at or above this are positive. `None` means only the
    /// highest-ranked label seen in the data.
    pub positive_min_rank: Option<i32>,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 10,
            batch_size: 32,
            l2: 1e-6,
            seed: 0,
            positive_min_rank: None,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), BaselineError> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(BaselineError::Config("learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(BaselineError::Config("batch_size must be >= 1".into()));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(BaselineError::Config("l2 must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub hyperparams: Hyperparams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Regularised train loss after each epoch.
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
    pub validation_accuracy: Option<f64>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl PointwiseModel {
    pub fn zero(hyperparams: Hyperparams) -> Self {
        Self {
            weights: vec![0.0; DIMENSION],
            bias: 0.0,
            hyperparams,
        }
    }

    pub fn margin(&self, x: &FeatureVector) -> f64 {
        self.bias + x.entries.iter().map(|&(i, v)| self.weights[i as usize] * v).sum::<f64>()
    }

    pub fn predict(&self, x: &FeatureVector) -> f64 {
        sigmoid(self.margin(x))
    }

    /// Mean logistic loss plus `l2 / 2 * |w|^2` (bias unregularised).
    pub fn loss(&self, data: &[(FeatureVector, f64)], l2: f64) -> f64 {
        let data_loss: f64 = data
            .iter()
            .map(|(x, y)| {
                let z = self.margin(x);
                softplus(z) - y * z
            })
            .sum::<f64>()
            / data.len().max(1) as f64;
        data_loss + 0.5 * l2 * self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    /// Analytic gradient of [`loss`](Self::loss): sparse weight part (data
    /// term plus `l2 * w` on touched indices) and bias part. Untouched
    /// indices have gradient `l2 * w`.
    pub fn gradient(&self, data: &[(FeatureVector, f64)], l2: f64) -> (BTreeMap<u32, f64>, f64) {
        let n = data.len().max(1) as f64;
        let mut grad: BTreeMap<u32, f64> = BTreeMap::new();
        let mut bias = 0.0;
        for (x, y) in data {
            let r = self.predict(x) - y;
            bias += r / n;
            for &(i, v) in &x.entries {
                *grad.entry(i).or_default() += r * v / n;
            }
        }
        for (i, g) in grad.iter_mut() {
            *g += l2 * self.weights[*i as usize];
        }
        (grad, bias)
    }

    pub fn write_to(&self, mut out: impl Write) -> io::Result<()> {
        writeln!(out, "{MODEL_HEADER}")?;
        writeln!(out, "dim\t{}", self.weights.len())?;
        let hp = serde_json::to_string(&self.hyperparams).map_err(io::Error::other)?;
        writeln!(out, "hyperparams\t{hp}")?;
        writeln!(out, "bias\t{}", self.bias)?;
        for (i, w) in self.weights.iter().enumerate() {
            if *w != 0.0 {
                writeln!(out, "w\t{i}\t{w}")?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), BaselineError> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn read_from(input: impl BufRead) -> Result<Self, BaselineError> {
        let bad = |line: usize, reason: &str| BaselineError::Format {
            line,
            reason: reason.to_string(),
        };
        let mut model: Option<PointwiseModel> = None;
        let mut hyperparams = None;
        let mut bias = None;
        for (i, line) in input.lines().enumerate() {
            let (ln, line) = (i + 1, line?);
            if ln == 1 {
                if line != MODEL_HEADER {
                    return Err(bad(ln, "missing or unsupported version header"));
                }
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            match (f[0], f.len()) {
                ("dim", 2) => {
                    let dim: usize = f[1].parse().map_err(|_| bad(ln, "bad dimension"))?;
                    if dim != DIMENSION {
                        return Err(bad(ln, &format!("dimension {dim}, expected {DIMENSION}")));
                    }
                    model = Some(PointwiseModel::zero(Hyperparams::default()));
                }
                ("hyperparams", 2) => {
                    hyperparams = Some(serde_json::from_str(f[1]).map_err(|_| bad(ln, "bad hyperparams"))?);
                }
                ("bias", 2) => bias = Some(f[1].parse::<f64>().map_err(|_| bad(ln, "bad bias"))?),
                ("w", 3) => {
                    let m = model.as_mut().ok_or_else(|| bad(ln, "weight before dim"))?;
                    let idx: usize = f[1].parse().map_err(|_| bad(ln, "bad index"))?;
                    let w: f64 = f[2].parse().map_err(|_| bad(ln, "bad weight"))?;
                    *m.weights.get_mut(idx).ok_or_else(|| bad(ln, "index out of range"))? = w;
                }
                _ => return Err(bad(ln, "unrecognised line")),
            }
        }
        let mut model = model.ok_or_else(|| bad(0, "missing dim line"))?;
        model.hyperparams = hyperparams.ok_or_else(|| bad(0, "missing hyperparams line"))?;
        model.bias = bias.ok_or_else(|| bad(0, "missing bias line"))?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BaselineError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

pub fn predict_relevance(model: &PointwiseModel, query: &str, doc: &Document) -> f64 {
    model.predict(&featurize(query, doc))
}

/// Binary target for each example under `rule`.
pub fn binarize(examples: &[SyntheticExample], positive_min_rank: Option<i32>) -> Vec<bool> {
    let threshold = positive_min_rank.unwrap_or_else(|| examples.iter().map(|e| e.label.rank).max().unwrap_or(0));
    examples.iter().map(|e| e.label.rank >= threshold).collect()
}

/// Featurize examples against the corpus and binarize labels.
pub fn prepare(
    examples: &[SyntheticExample],
    docs: &BTreeMap<&str, &Document>,
    positive_min_rank: Option<i32>,
) -> Result<Vec<(FeatureVector, f64)>, BaselineError> {
    let labels = binarize(examples, positive_min_rank);
    examples
        .iter()
        .zip(labels)
        .map(|(e, y)| {
            let doc = docs.get(e.doc_id.as_str()).ok_or_else(|| BaselineError::MissingDocument(e.doc_id.clone()))?;
            Ok((featurize(&e.query, doc), if y { 1.0 } else { 0.0 }))
        })
        .collect()
}

fn accuracy(model: &PointwiseModel, data: &[(FeatureVector, f64)]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let hits = data.iter().filter(|(x, y)| (model.predict(x) >= 0.5) == (*y >= 0.5)).count();
    hits as f64 / data.len() as f64
}

/// Mini-batch gradient descent on the regularised logistic loss, visiting
/// examples in a seeded shuffle each epoch.
pub fn train_features(
    data: &[(FeatureVector, f64)],
    validation: Option<&[(FeatureVector, f64)]>,
    hp: &Hyperparams,
) -> Result<(PointwiseModel, TrainReport), BaselineError> {
    hp.validate()?;
    let positives = data.iter().filter(|(_, y)| *y >= 0.5).count();
    if positives == 0 || positives == data.len() {
        return Err(BaselineError::SingleClassData);
    }
    let mut model = PointwiseModel::zero(hp.clone());
    let mut rng = SplitMix64::new(derive_seed(hp.seed, "baseline-shuffle"));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(hp.epochs);
    // Weights are stored as `scale * v` so weight decay stays O(1) per step.
    let mut scale = 1.0f64;
    let decay = 1.0 - hp.learning_rate * hp.l2;
    for epoch in 0..hp.epochs {
        rng.shuffle(&mut order);
        for batch in order.chunks(hp.batch_size) {
            let b = batch.len() as f64;
            let residuals: Vec<f64> = batch
                .iter()
                .map(|&i| {
                    let (x, y) = &data[i];
                    let z = model.bias + scale * x.entries.iter().map(|&(j, v)| model.weights[j as usize] * v).sum::<f64>();
                    sigmoid(z) - y
                })
                .collect();
            scale *= decay;
            let step = hp.learning_rate / (b * scale);
            for (&i, r) in batch.iter().zip(&residuals) {
                for &(j, v) in &data[i].0.entries {
                    model.weights[j as usize] -= step * r * v;
                }
            }
            model.bias -= hp.learning_rate * residuals.iter().sum::<f64>() / b;
            if scale < 1e-6 {
                model.weights.iter_mut().for_each(|w| *w *= scale);
                scale = 1.0;
            }
        }
        if scale != 1.0 {
            model.weights.iter_mut().for_each(|w| *w *= scale);
            scale = 1.0;
        }
        let loss = model.loss(data, hp.l2);
        if !loss.is_finite() {
            return Err(BaselineError::NonFiniteLoss(epoch));
        }
        epoch_losses.push(loss);
    }
    let report = TrainReport {
        epoch_losses,
        train_accuracy: accuracy(&model, data),
        validation_accuracy: validation.map(|v| accuracy(&model, v)),
    };
    Ok((model, report))
}

pub fn train(
    examples: &[SyntheticExample],
    docs: &BTreeMap<&str, &Document>,
    hp: &Hyperparams,
) -> Result<(PointwiseModel, TrainReport), BaselineError> {
    let data = prepare(examples, docs, hp.positive_min_rank)?;
    train_features(&data, None, hp)
}

/// Uniform score in [0, 1) fixed by (seed, query, doc).
pub fn random_score(seed: u64, query: &str, doc_id: &str) -> f64 {
    let h = fnv1a64_extend(fnv1a64_extend(fnv1a64(query.as_bytes()), b"\x1f"), doc_id.as_bytes());
    SplitMix64::new(seed ^ h).next_f64()
}

/// One line of the training export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRecord {
    pub query: String,
    pub doc_id: String,
    pub doc_text: String,
    pub label: RelevanceLabel,
    pub variant: QGenVariant,
    pub stage: Stage,
}

/// JSON lines, one retained example per line, in input order.
pub fn export_training_data(
    examples: &[SyntheticExample],
    docs: &BTreeMap<&str, &Document>,
    mut out: impl Write,
) -> Result<(), BaselineError> {
    for e in examples.iter().filter(|e| e.is_retained()) {
        let doc = docs.get(e.doc_id.as_str()).ok_or_else(|| BaselineError::MissingDocument(e.doc_id.clone()))?;
        let record = ExportRecord {
            query: e.query.clone(),
            doc_id: e.doc_id.clone(),
            doc_text: doc.display_text(),
            label: e.label.clone(),
            variant: e.variant.clone(),
            stage: e.stage,
        };
        let line = serde_json::to_string(&record).map_err(io::Error::other)?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn import_training_data(input: impl BufRead) -> Result<Vec<SyntheticExample>, BaselineError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: ExportRecord = serde_json::from_str(&line).map_err(|source| BaselineError::Import { line: i + 1, source })?;
        out.push(SyntheticExample {
            query: r.query,
            doc_id: r.doc_id,
            label: r.label,
            variant: r.variant,
            verdict: Verdict::Retained,
            stage: r.stage,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationSample {
    pub examples: Vec<SyntheticExample>,
    pub positives: usize,
    pub negatives: usize,
    /// A class had fewer than `n / 2` examples.
    pub shortage: bool,
}

/// Up to `n / 2` examples of each binary class, chosen by a seeded shuffle.
pub fn sample_validation(
    examples: &[SyntheticExample],
    n: usize,
    seed: u64,
    positive_min_rank: Option<i32>,
) -> ValidationSample {
    let labels = binarize(examples, positive_min_rank);
    let mut rng = SplitMix64::new(derive_seed(seed, "validation-sample"));
    let half = n / 2;
    let mut pick = |want: bool| {
        let mut idx: Vec<usize> = (0..examples.len()).filter(|&i| labels[i] == want).collect();
        let short = idx.len() < half;
        let take = half.min(idx.len());
        rng.partial_shuffle(&mut idx, take);
        idx.truncate(take);
        (idx, short)
    };
    let (pos, pos_short) = pick(true);
    let (neg, neg_short) = pick(false);
    let mut chosen: Vec<usize> = pos.iter().chain(&neg).copied().collect();
    chosen.sort_unstable();
    ValidationSample {
        examples: chosen.into_iter().map(|i| examples[i].clone()).collect(),
        positives: pos.len(),
        negatives: neg.len(),
        shortage: pos_short || neg_short,
    }
}
