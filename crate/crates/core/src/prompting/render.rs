use serde::{Deserialize, Serialize};

use super::exemplars::{check_filter_set, Exemplar, ExemplarSet};
use super::{PromptError, QGenVariant, RelevanceLabel};
use crate::corpus::Document;
use crate::text::collapse_whitespace;

/// A target document cut down to the character budget.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncationEvent {
    pub doc_id: String,
    pub original_chars: usize,
    pub kept_chars: usize,
}

/// Structured copy of what went into a prompt. Never sent over the wire;
/// the mock backend and the pipeline read it instead of re-parsing text.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PromptMeta {
    /// Target document text as rendered (after truncation).
    pub target_text: String,
    pub target_label: Option<String>,
    pub prior_query: Option<String>,
    /// Candidate query of a filter prompt.
    pub filter_query: Option<String>,
    /// Label names in descending relevance.
    pub labels: Vec<String>,
    /// Document field name (`passage` / `product`).
    pub field: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    /// Parser to apply to completions; `None` for filter prompts.
    pub expected_parse: Option<QGenVariant>,
    pub target_doc_id: String,
    /// The unanswered final line the completion continues.
    pub cue: String,
    pub truncation: Option<TruncationEvent>,
    pub meta: PromptMeta,
}

impl RenderedPrompt {
    /// Re-attach the cue to a completion so it can be parsed as a whole
    /// block. Completions that already repeat the cue are kept as they are.
    pub fn complete_with(&self, completion: &str) -> String {
        let cue = self.cue.trim_end();
        let body = completion.trim_start_matches([' ', '\t']);
        let echoes = body
            .get(..cue.len())
            .is_some_and(|head| head.eq_ignore_ascii_case(cue));
        if echoes {
            body.to_string()
        } else {
            format!("{}{}", self.cue, body)
        }
    }
}

fn doc_text(doc: &Document) -> String {
    collapse_whitespace(&doc.display_text())
}

fn truncate_target(doc: &Document, budget: usize) -> (String, Option<TruncationEvent>) {
    let text = doc_text(doc);
    let total = text.chars().count();
    if total <= budget {
        return (text, None);
    }
    let kept: String = text.chars().take(budget).collect();
    let event = TruncationEvent {
        doc_id: doc.id.clone(),
        original_chars: total,
        kept_chars: budget,
    };
    (kept, Some(event))
}

fn exemplar_block(set: &ExemplarSet, ex: &Exemplar) -> String {
    let field = set.field.as_str();
    let mut lines = vec![format!("{field}: {}", doc_text(&ex.document))];
    let e = &ex.entries;
    match &set.variant {
        QGenVariant::RelevantOnly => lines.push(format!("query: {}", e[0].query)),
        QGenVariant::LabelConditioned => {
            lines.push(format!("label: {}", e[0].label.name));
            lines.push(format!("query: {}", e[0].query));
        }
        QGenVariant::Pairwise | QGenVariant::IterativeStage2 => {
            lines.push(format!("query1: {}", e[0].query));
            lines.push(format!("query2: {}", e[1].query));
        }
        QGenVariant::PairwiseLabelPair(..) => {
            lines.push(format!(
                "task: generate query1 for {} and query2 for {}",
                e[0].label.name, e[1].label.name
            ));
            lines.push(format!("query1: {}", e[0].query));
            lines.push(format!("query2: {}", e[1].query));
        }
        QGenVariant::AllLabels => {
            for entry in e {
                lines.push(format!("Label: {} Query: {}", entry.label.name, entry.query));
            }
        }
    }
    lines.join("\n")
}

fn filter_block(set: &ExemplarSet, ex: &Exemplar) -> String {
    format!(
        "query: {}\n{}: {}\nlabel: {}",
        ex.entries[0].query,
        set.field.as_str(),
        doc_text(&ex.document),
        ex.entries[0].label.name
    )
}

/// Instruction, then one block per exemplar, then the target block, all
/// separated by exactly one blank line.
fn assemble(instruction: &str, blocks: Vec<String>, target: String) -> String {
    let mut sections = Vec::with_capacity(blocks.len() + 2);
    sections.push(instruction.to_string());
    sections.extend(blocks);
    sections.push(target);
    sections.join("\n\n")
}

fn single_line(value: &str) -> String {
    collapse_whitespace(value)
}

/// Render the generation prompt for `target`.
///
/// `target_label` is required for label-conditioned prompts and
/// `prior_query` for iterative stage 2; both are rejected elsewhere.
pub fn render_generation_prompt(
    set: &ExemplarSet,
    target: &Document,
    target_label: Option<&RelevanceLabel>,
    prior_query: Option<&str>,
) -> Result<RenderedPrompt, PromptError> {
    let field = set.field.as_str();
    let (target_text, truncation) = truncate_target(target, set.max_doc_chars);
    let mut meta = PromptMeta {
        target_text: target_text.clone(),
        labels: set.label_set.names(),
        field: field.to_string(),
        ..PromptMeta::default()
    };

    let needs_label = set.variant == QGenVariant::LabelConditioned;
    match (needs_label, target_label.is_some()) {
        (true, false) => return Err(PromptError::MissingLabel),
        (false, true) => return Err(PromptError::UnexpectedInput("target label")),
        _ => {}
    }
    let needs_prior = set.variant == QGenVariant::IterativeStage2;
    let prior = prior_query.map(single_line).filter(|q| !q.is_empty());
    match (needs_prior, prior.is_some()) {
        (true, false) => return Err(PromptError::MissingPriorQuery),
        (false, true) => return Err(PromptError::UnexpectedInput("prior query")),
        _ => {}
    }

    let mut lines = vec![format!("{field}: {target_text}")];
    let cue = match &set.variant {
        QGenVariant::RelevantOnly => "query: ",
        QGenVariant::LabelConditioned => {
            let label = target_label.ok_or(PromptError::MissingLabel)?;
            let label = set
                .label_set
                .get(&label.name)
                .ok_or_else(|| PromptError::UnknownLabel(label.name.clone()))?;
            lines.push(format!("label: {}", label.name));
            meta.target_label = Some(label.name.clone());
            "query: "
        }
        QGenVariant::Pairwise => "query1: ",
        QGenVariant::IterativeStage2 => {
            let prior = prior.ok_or(PromptError::MissingPriorQuery)?;
            lines.push(format!("query1: {prior}"));
            meta.prior_query = Some(prior);
            "query2: "
        }
        QGenVariant::PairwiseLabelPair(a, b) => {
            let a = &set.label_set.get(a).ok_or_else(|| PromptError::UnknownLabel(a.clone()))?.name;
            let b = &set.label_set.get(b).ok_or_else(|| PromptError::UnknownLabel(b.clone()))?.name;
            lines.push(format!("task: generate query1 for {a} and query2 for {b}"));
            "query1: "
        }
        QGenVariant::AllLabels => "Label: ",
    };
    lines.push(cue.to_string());

    let blocks = set.exemplars.iter().map(|ex| exemplar_block(set, ex)).collect();
    Ok(RenderedPrompt {
        text: assemble(&set.instruction, blocks, lines.join("\n")),
        expected_parse: Some(set.variant.clone()),
        target_doc_id: target.id.clone(),
        cue: cue.to_string(),
        truncation,
        meta,
    })
}

/// Render the round-trip consistency prompt asking for the label of
/// `(query, doc)`.
pub fn render_filter_prompt(set: &ExemplarSet, query: &str, doc: &Document) -> Result<RenderedPrompt, PromptError> {
    let query = single_line(query);
    if query.is_empty() {
        return Err(PromptError::MissingQuery);
    }
    check_filter_set(set)?;
    let (target_text, truncation) = truncate_target(doc, set.max_doc_chars);
    let cue = "label: ";
    let target = format!("query: {query}\n{}: {target_text}\n{cue}", set.field.as_str());
    let blocks = set.exemplars.iter().map(|ex| filter_block(set, ex)).collect();
    Ok(RenderedPrompt {
        text: assemble(&set.instruction, blocks, target),
        expected_parse: None,
        target_doc_id: doc.id.clone(),
        cue: cue.to_string(),
        truncation,
        meta: PromptMeta {
            target_text,
            filter_query: Some(query),
            labels: set.label_set.names(),
            field: set.field.as_str().to_string(),
            ..PromptMeta::default()
        },
    })
}
