use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Candidate, LabelPrediction, SynthError, SyntheticExample, Verdict};
use crate::backend::{Backend, GenerationParams};
use crate::corpus::Document;
use crate::prompting::{render_filter_prompt, ExemplarSet, LabelSet, RelevanceLabel};
use crate::text::normalize_query;

/// How the round-trip filter obtains a label.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterMode {
    /// Score every label name as a continuation and take the argmax.
    #[default]
    Scoring,
    /// Greedily generate the label and parse it.
    Generation,
}

fn check_labels(label_set: &LabelSet) -> Result<(), SynthError> {
    if label_set.len() < 2 {
        return Err(SynthError::Config("filtering needs at least two labels".into()));
    }
    Ok(())
}

/// Argmax over label log-likelihoods. Exactly equal maxima are a tie.
pub fn predict_label_scoring(
    backend: &dyn Backend,
    filter_set: &ExemplarSet,
    query: &str,
    doc: &Document,
    label_set: &LabelSet,
) -> Result<LabelPrediction, SynthError> {
    check_labels(label_set)?;
    let prompt = render_filter_prompt(filter_set, query, doc)?;
    let names = label_set.names();
    let scores = match backend.score(&prompt, &names) {
        Ok(s) => s,
        Err(e) => return Ok(LabelPrediction::Failed(e)),
    };
    Ok(argmax(label_set, &scores))
}

fn argmax(label_set: &LabelSet, scores: &[f64]) -> LabelPrediction {
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let winners: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] == best).collect();
    match winners.as_slice() {
        [i] => LabelPrediction::Label(label_set.labels()[*i].clone()),
        _ => LabelPrediction::Tie,
    }
}

/// Read a label name from the first line of a generated completion.
///
/// Matching is exact up to ASCII case. A trailing `Query: ...` (the
/// all-labels output format) and a leading `label:` echo are tolerated.
pub fn parse_label<'a>(text: &str, label_set: &'a LabelSet) -> Option<&'a RelevanceLabel> {
    let line = text.lines().map(str::trim).find(|l| !l.is_empty())?;
    let line = match line.get(..6) {
        Some(head) if head.eq_ignore_ascii_case("label:") => line[6..].trim(),
        _ => line,
    };
    let lower = line.to_ascii_lowercase();
    let name = match lower.find("query:") {
        Some(at) => line[..at].trim(),
        None => line,
    };
    label_set.get(name)
}

/// Single greedy generation parsed with [`parse_label`].
pub fn predict_label_generation(
    backend: &dyn Backend,
    filter_set: &ExemplarSet,
    query: &str,
    doc: &Document,
    label_set: &LabelSet,
) -> Result<LabelPrediction, SynthError> {
    check_labels(label_set)?;
    let prompt = render_filter_prompt(filter_set, query, doc)?;
    let out = match backend.generate(&prompt, &GenerationParams::greedy_label()) {
        Ok(out) => out,
        Err(e) => return Ok(LabelPrediction::Failed(e)),
    };
    let text = out.first().map(|c| c.text.as_str()).unwrap_or_default();
    Ok(match parse_label(text, label_set) {
        Some(label) => LabelPrediction::Label(label.clone()),
        None => LabelPrediction::Unknown(text.trim().to_string()),
    })
}

/// Keep a candidate only when the predicted label equals the label it was
/// generated for. Order is preserved.
pub fn consistency_filter(
    candidates: &[Candidate],
    predictions: &[LabelPrediction],
) -> Result<Vec<SyntheticExample>, SynthError> {
    if candidates.len() != predictions.len() {
        return Err(SynthError::Misaligned {
            candidates: candidates.len(),
            predictions: predictions.len(),
        });
    }
    Ok(candidates
        .iter()
        .zip(predictions)
        .map(|(c, p)| {
            let verdict = match p {
                LabelPrediction::Label(l) if l.name == c.intended_label.name => Verdict::Retained,
                LabelPrediction::Label(_) => Verdict::DroppedLabelMismatch,
                LabelPrediction::Tie | LabelPrediction::Unknown(_) => Verdict::DroppedTie,
                LabelPrediction::Failed(_) => Verdict::DroppedFilterError,
            };
            SyntheticExample {
                query: c.query.clone(),
                doc_id: c.doc_id.clone(),
                label: c.intended_label.clone(),
                variant: c.variant.clone(),
                verdict,
                stage: c.stage,
            }
        })
        .collect())
}

/// Remove duplicate retained queries per document.
///
/// Queries are compared after lowercasing and whitespace collapse. When a
/// `(query, doc)` pair was kept under two or more labels every copy becomes
/// [`Verdict::DroppedDuplicateConflict`]; otherwise the first copy stays and
/// the rest become [`Verdict::DroppedDuplicate`]. Non-retained examples pass
/// through untouched and order is preserved.
pub fn dedup(mut examples: Vec<SyntheticExample>) -> Vec<SyntheticExample> {
    let mut labels: BTreeMap<(String, &str), BTreeSet<&str>> = BTreeMap::new();
    for e in examples.iter().filter(|e| e.is_retained()) {
        labels
            .entry((normalize_query(&e.query), e.doc_id.as_str()))
            .or_default()
            .insert(e.label.name.as_str());
    }
    let conflicted: BTreeSet<(String, String)> = labels
        .into_iter()
        .filter(|(_, l)| l.len() > 1)
        .map(|((q, d), _)| (q, d.to_string()))
        .collect();

    let mut seen = BTreeSet::new();
    for e in examples.iter_mut().filter(|e| e.is_retained()) {
        let key = (normalize_query(&e.query), e.doc_id.clone());
        if conflicted.contains(&key) {
            e.verdict = Verdict::DroppedDuplicateConflict;
        } else if !seen.insert(key) {
            e.verdict = Verdict::DroppedDuplicate;
        }
    }
    examples
}
