use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::templates::{instruction_key, DocField, TemplateSet, FILTER_KEY};
use super::{LabelSet, PromptError, QGenVariant, RelevanceLabel};
use crate::corpus::Document;

/// Demonstrations per generation prompt.
pub const SHOTS: usize = 10;
/// Per-label demonstrations for binary label-conditioned prompts.
pub const SHOTS_PER_BINARY_LABEL: usize = 5;
/// Minimum per-label demonstrations for label-conditioned prompts over
/// more than two labels.
pub const MIN_SHOTS_PER_FINE_LABEL: usize = 2;

/// One record of an exemplar file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub query: String,
    #[serde(default)]
    pub doc_title: String,
    pub doc_text: String,
    pub label: String,
}

impl LabeledPair {
    fn doc_key(&self) -> (&str, &str) {
        (self.doc_title.as_str(), self.doc_text.as_str())
    }
}

pub fn load_labeled_pairs(path: impl AsRef<Path>) -> Result<Vec<LabeledPair>, PromptError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| PromptError::Io(format!("{}: {e}", path.display())))?;
    let mut pairs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| PromptError::Io(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: LabeledPair = serde_json::from_str(&line).map_err(|e| {
            PromptError::InvalidExemplar(format!("{}:{}: {e}", path.display(), i + 1))
        })?;
        pairs.push(pair);
    }
    Ok(pairs)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExemplarEntry {
    pub label: RelevanceLabel,
    pub query: String,
}

/// A document with one or more labeled demonstration queries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub document: Document,
    pub entries: Vec<ExemplarEntry>,
}

impl Exemplar {
    pub fn new(document: Document, entries: Vec<ExemplarEntry>) -> Result<Self, PromptError> {
        if entries.is_empty() {
            return Err(PromptError::InvalidExemplar(format!(
                "exemplar for {:?} has no queries",
                document.id
            )));
        }
        for e in &entries {
            if e.query.trim().is_empty() || e.query.contains('\n') || e.query.contains('\r') {
                return Err(PromptError::InvalidExemplar(format!(
                    "exemplar query {:?} must be a single non-empty line",
                    e.query
                )));
            }
        }
        Ok(Self { document, entries })
    }
}

/// The demonstrations, instruction and label set for one prompt kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExemplarSet {
    pub variant: QGenVariant,
    pub exemplars: Vec<Exemplar>,
    pub instruction: String,
    pub label_set: LabelSet,
    pub field: DocField,
    pub max_doc_chars: usize,
}

impl ExemplarSet {
    /// Assemble a set from prepared exemplars, checking only per-exemplar
    /// shape. Composition rules are enforced by [`build_exemplar_set`].
    pub fn new(
        variant: QGenVariant,
        exemplars: Vec<Exemplar>,
        instruction: impl Into<String>,
        label_set: LabelSet,
        field: DocField,
    ) -> Result<Self, PromptError> {
        check_variant_labels(&variant, &label_set)?;
        for ex in &exemplars {
            check_exemplar_shape(&variant, ex, &label_set)?;
        }
        Ok(Self {
            variant,
            exemplars,
            instruction: instruction.into(),
            label_set,
            field,
            max_doc_chars: super::templates::DEFAULT_MAX_DOC_CHARS,
        })
    }

    /// The same demonstrations aimed at a different label pair.
    pub fn retarget(&self, variant: QGenVariant) -> Result<Self, PromptError> {
        if std::mem::discriminant(&variant) != std::mem::discriminant(&self.variant) {
            return Err(PromptError::WrongLabelSet(format!(
                "cannot retarget a {} set to {variant}",
                self.variant
            )));
        }
        check_variant_labels(&variant, &self.label_set)?;
        Ok(Self {
            variant,
            ..self.clone()
        })
    }

    pub fn len(&self) -> usize {
        self.exemplars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exemplars.is_empty()
    }

    /// Labels that appear anywhere in the demonstrations.
    pub fn covered_labels(&self) -> BTreeSet<String> {
        self.exemplars
            .iter()
            .flat_map(|ex| ex.entries.iter().map(|e| e.label.name.clone()))
            .collect()
    }
}

fn check_variant_labels(variant: &QGenVariant, label_set: &LabelSet) -> Result<(), PromptError> {
    match variant {
        QGenVariant::Pairwise | QGenVariant::IterativeStage2 if !label_set.is_binary() => Err(
            PromptError::WrongLabelSet(format!("{variant} needs a two-label set")),
        ),
        QGenVariant::PairwiseLabelPair(a, b) => {
            let la = label_set.get(a).ok_or_else(|| PromptError::UnknownLabel(a.clone()))?;
            let lb = label_set.get(b).ok_or_else(|| PromptError::UnknownLabel(b.clone()))?;
            if la == lb {
                return Err(PromptError::WrongLabelSet(format!("{variant} repeats a label")));
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

fn check_exemplar_shape(variant: &QGenVariant, ex: &Exemplar, labels: &LabelSet) -> Result<(), PromptError> {
    for e in &ex.entries {
        if labels.get(&e.label.name).is_none() {
            return Err(PromptError::UnknownLabel(e.label.name.clone()));
        }
    }
    let names: Vec<&str> = ex.entries.iter().map(|e| e.label.name.as_str()).collect();
    let ok = match variant {
        QGenVariant::RelevantOnly => names.len() == 1 && names[0] == labels.top().name,
        QGenVariant::LabelConditioned => names.len() == 1,
        QGenVariant::Pairwise | QGenVariant::IterativeStage2 => {
            names == [labels.top().name.as_str(), labels.bottom().name.as_str()]
        }
        QGenVariant::PairwiseLabelPair(..) => names.len() == 2 && names[0] != names[1],
        QGenVariant::AllLabels => names == labels.names(),
    };
    if ok {
        Ok(())
    } else {
        Err(PromptError::InvalidExemplar(format!(
            "exemplar for {:?} has labels {names:?}, which do not fit {variant}",
            ex.document.id
        )))
    }
}

/// Pairs sharing a document, in first-appearance order.
struct DocGroup<'a> {
    title: &'a str,
    text: &'a str,
    pairs: Vec<&'a LabeledPair>,
}

impl DocGroup<'_> {
    fn first_for(&self, label: &str) -> Option<&LabeledPair> {
        self.pairs.iter().copied().find(|p| p.label.eq_ignore_ascii_case(label))
    }

    fn labels(&self) -> BTreeSet<String> {
        self.pairs.iter().map(|p| p.label.to_ascii_lowercase()).collect()
    }
}

fn group_by_document(pairs: &[LabeledPair]) -> Vec<DocGroup<'_>> {
    let mut groups: Vec<DocGroup<'_>> = Vec::new();
    for p in pairs {
        let (title, text) = p.doc_key();
        match groups.iter_mut().find(|g| g.title == title && g.text == text) {
            Some(g) => g.pairs.push(p),
            None => groups.push(DocGroup {
                title,
                text,
                pairs: vec![p],
            }),
        }
    }
    groups
}

fn exemplar_document(ordinal: usize, title: &str, text: &str) -> Document {
    let title = (!title.trim().is_empty()).then(|| title.to_string());
    Document::new(format!("exemplar-{ordinal}"), title, text)
}

fn entry(labels: &LabelSet, pair: &LabeledPair) -> Result<ExemplarEntry, PromptError> {
    let label = labels
        .get(&pair.label)
        .ok_or_else(|| PromptError::UnknownLabel(pair.label.clone()))?;
    Ok(ExemplarEntry {
        label: label.clone(),
        query: pair.query.trim().to_string(),
    })
}

fn single_entry_exemplar(ordinal: usize, labels: &LabelSet, pair: &LabeledPair) -> Result<Exemplar, PromptError> {
    let (title, text) = pair.doc_key();
    Exemplar::new(exemplar_document(ordinal, title, text), vec![entry(labels, pair)?])
}

fn insufficient(label: &RelevanceLabel) -> PromptError {
    PromptError::InsufficientExemplars(label.name.clone())
}

/// Pick the demonstrations for `variant` from a pool of labeled pairs.
///
/// Composition per variant:
/// * relevant-only: the first 10 pairs carrying the top label;
/// * label-conditioned: 5 per label for a binary set, otherwise 10 drawn
///   round-robin over the labels with at least 2 per label;
/// * pairwise / iterative stage 2: the first 10 documents that have both a
///   relevant and an irrelevant query;
/// * label pair: up to 10 documents with two differently-labeled queries
///   (file order decides query1/query2), jointly covering every label;
/// * all labels: up to 10 documents with a query for every label.
pub fn build_exemplar_set(
    pairs: &[LabeledPair],
    variant: QGenVariant,
    label_set: &LabelSet,
    templates: &TemplateSet,
) -> Result<ExemplarSet, PromptError> {
    check_variant_labels(&variant, label_set)?;
    for p in pairs {
        if label_set.get(&p.label).is_none() {
            return Err(PromptError::UnknownLabel(p.label.clone()));
        }
    }
    let exemplars = match &variant {
        QGenVariant::RelevantOnly => {
            let top = label_set.top();
            let chosen: Vec<_> = pairs
                .iter()
                .filter(|p| p.label.eq_ignore_ascii_case(&top.name))
                .take(SHOTS)
                .collect();
            if chosen.len() < SHOTS {
                return Err(insufficient(top));
            }
            chosen
                .into_iter()
                .enumerate()
                .map(|(i, p)| single_entry_exemplar(i, label_set, p))
                .collect::<Result<Vec<_>, _>>()?
        }
        QGenVariant::LabelConditioned => label_conditioned(pairs, label_set)?,
        QGenVariant::Pairwise | QGenVariant::IterativeStage2 => {
            let (top, bottom) = (label_set.top(), label_set.bottom());
            let groups = group_by_document(pairs);
            let with_top = groups.iter().filter(|g| g.first_for(&top.name).is_some()).count();
            if with_top < SHOTS {
                return Err(insufficient(top));
            }
            let complete: Vec<_> = groups
                .iter()
                .filter_map(|g| Some((g, g.first_for(&top.name)?, g.first_for(&bottom.name)?)))
                .take(SHOTS)
                .collect();
            if complete.len() < SHOTS {
                return Err(insufficient(bottom));
            }
            complete
                .into_iter()
                .enumerate()
                .map(|(i, (g, rel, irrel))| {
                    Exemplar::new(
                        exemplar_document(i, g.title, g.text),
                        vec![entry(label_set, rel)?, entry(label_set, irrel)?],
                    )
                })
                .collect::<Result<Vec<_>, _>>()?
        }
        QGenVariant::PairwiseLabelPair(..) => {
            let mut chosen = Vec::new();
            for g in group_by_document(pairs) {
                if chosen.len() == SHOTS {
                    break;
                }
                let Some(first) = g.pairs.first() else { continue };
                let Some(second) = g.pairs.iter().find(|p| !p.label.eq_ignore_ascii_case(&first.label)) else {
                    continue;
                };
                chosen.push(Exemplar::new(
                    exemplar_document(chosen.len(), g.title, g.text),
                    vec![entry(label_set, first)?, entry(label_set, second)?],
                )?);
            }
            chosen
        }
        QGenVariant::AllLabels => {
            let groups = group_by_document(pairs);
            let mut chosen = Vec::new();
            for g in &groups {
                if chosen.len() == SHOTS {
                    break;
                }
                let entries: Option<Vec<&LabeledPair>> =
                    label_set.labels().iter().map(|l| g.first_for(&l.name)).collect();
                if let Some(entries) = entries {
                    chosen.push(Exemplar::new(
                        exemplar_document(chosen.len(), g.title, g.text),
                        entries
                            .into_iter()
                            .map(|p| entry(label_set, p))
                            .collect::<Result<Vec<_>, _>>()?,
                    )?);
                }
            }
            if chosen.is_empty() {
                // Name the first label missing from the best-covered document.
                let best = groups.iter().max_by_key(|g| g.labels().len());
                let missing = label_set
                    .labels()
                    .iter()
                    .find(|l| best.is_none_or(|g| g.first_for(&l.name).is_none()))
                    .unwrap_or(label_set.top());
                return Err(insufficient(missing));
            }
            chosen
        }
    };

    let set = ExemplarSet {
        instruction: templates.instruction(instruction_key(&variant))?.to_string(),
        variant,
        exemplars,
        label_set: label_set.clone(),
        field: templates.field,
        max_doc_chars: templates.max_doc_chars,
    };
    if matches!(set.variant, QGenVariant::PairwiseLabelPair(..)) {
        require_coverage(&set)?;
    }
    Ok(set)
}

fn label_conditioned(pairs: &[LabeledPair], label_set: &LabelSet) -> Result<Vec<Exemplar>, PromptError> {
    let mut queues: Vec<Vec<&LabeledPair>> = label_set
        .labels()
        .iter()
        .map(|l| {
            pairs
                .iter()
                .filter(|p| p.label.eq_ignore_ascii_case(&l.name))
                .rev()
                .collect()
        })
        .collect();

    let quota = if label_set.is_binary() {
        SHOTS_PER_BINARY_LABEL
    } else {
        MIN_SHOTS_PER_FINE_LABEL
    };
    for (label, queue) in label_set.labels().iter().zip(&queues) {
        if queue.len() < quota {
            return Err(insufficient(label));
        }
    }

    let target = if label_set.is_binary() {
        SHOTS_PER_BINARY_LABEL * 2
    } else {
        SHOTS.max(quota * label_set.len())
    };
    // Round-robin in descending label order until the target is reached.
    let mut chosen = Vec::with_capacity(target);
    'fill: loop {
        let mut progressed = false;
        for queue in queues.iter_mut() {
            if chosen.len() == target {
                break 'fill;
            }
            if let Some(p) = queue.pop() {
                chosen.push(p);
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    if chosen.len() < target {
        let fewest = label_set
            .labels()
            .iter()
            .min_by_key(|l| chosen.iter().filter(|p| p.label.eq_ignore_ascii_case(&l.name)).count())
            .unwrap_or(label_set.top());
        return Err(insufficient(fewest));
    }
    chosen
        .into_iter()
        .enumerate()
        .map(|(i, p)| single_entry_exemplar(i, label_set, p))
        .collect()
}

fn require_coverage(set: &ExemplarSet) -> Result<(), PromptError> {
    let covered = set.covered_labels();
    match set.label_set.labels().iter().find(|l| !covered.contains(&l.name)) {
        Some(missing) => Err(insufficient(missing)),
        None => Ok(()),
    }
}

/// Demonstrations for the round-trip consistency filter: the
/// label-conditioned composition with the filter instruction.
pub fn build_filter_set(
    pairs: &[LabeledPair],
    label_set: &LabelSet,
    templates: &TemplateSet,
) -> Result<ExemplarSet, PromptError> {
    for p in pairs {
        if label_set.get(&p.label).is_none() {
            return Err(PromptError::UnknownLabel(p.label.clone()));
        }
    }
    let exemplars = label_conditioned(pairs, label_set)?;
    Ok(ExemplarSet {
        variant: QGenVariant::LabelConditioned,
        exemplars,
        instruction: templates.instruction(FILTER_KEY)?.to_string(),
        label_set: label_set.clone(),
        field: templates.field,
        max_doc_chars: templates.max_doc_chars,
    })
}

/// Every label in the set must be demonstrated by a single-query exemplar.
pub(crate) fn check_filter_set(set: &ExemplarSet) -> Result<(), PromptError> {
    if set.exemplars.iter().any(|ex| ex.entries.len() != 1) {
        return Err(PromptError::InvalidExemplar(
            "filter exemplars carry exactly one labeled query".into(),
        ));
    }
    require_coverage(set)
}
