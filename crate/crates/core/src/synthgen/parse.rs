use super::{InvalidReason, ParseResult, ParsedQuery};
use crate::prompting::{LabelSet, QGenVariant, RelevanceLabel};
use crate::text::collapse_whitespace;

const DOC_FIELDS: [&str; 2] = ["passage:", "product:"];

fn strip_prefix_ci<'a>(line: &'a str, prefix: &str) -> Option<&'a str> {
    let head = line.get(..prefix.len())?;
    head.eq_ignore_ascii_case(prefix).then(|| &line[prefix.len()..])
}

fn find_ci(hay: &str, needle: &str) -> Option<usize> {
    let lower = hay.to_ascii_lowercase();
    lower.find(&needle.to_ascii_lowercase())
}

fn reopens_document(line: &str) -> bool {
    DOC_FIELDS.iter().any(|f| strip_prefix_ci(line, f).is_some())
}

fn invalid(reason: InvalidReason) -> ParseResult {
    ParseResult::Invalid(reason)
}

/// Parse a completion, with its cue re-attached, into candidate queries.
///
/// Blank lines are skipped, prefixes match case-insensitively and lines
/// after the expected ones are ignored, except that any line opening a new
/// `passage:` / `product:` block marks the whole output as garbage.
/// `target_label` is the label a label-conditioned prompt asked for.
pub fn parse_completion(
    variant: &QGenVariant,
    text: &str,
    label_set: &LabelSet,
    target_label: Option<&RelevanceLabel>,
) -> ParseResult {
    let lines: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    if lines.iter().any(|l| reopens_document(l)) {
        return invalid(InvalidReason::GarbageContinuation);
    }

    let labels: Vec<RelevanceLabel> = match variant {
        QGenVariant::RelevantOnly => vec![label_set.top().clone()],
        QGenVariant::LabelConditioned => match target_label.and_then(|l| label_set.get(&l.name)) {
            Some(l) => vec![l.clone()],
            None => {
                let text = target_label.map(|l| l.name.clone()).unwrap_or_default();
                return invalid(InvalidReason::UnknownLabel { text });
            }
        },
        QGenVariant::Pairwise => vec![label_set.top().clone(), label_set.bottom().clone()],
        QGenVariant::IterativeStage2 => vec![label_set.bottom().clone()],
        QGenVariant::PairwiseLabelPair(a, b) => {
            let mut pair = Vec::with_capacity(2);
            for name in [a, b] {
                match label_set.get(name) {
                    Some(l) => pair.push(l.clone()),
                    None => return invalid(InvalidReason::UnknownLabel { text: name.clone() }),
                }
            }
            pair
        }
        QGenVariant::AllLabels => return parse_all_labels(&lines, label_set),
    };

    let prefixes: &[&str] = match variant {
        QGenVariant::RelevantOnly | QGenVariant::LabelConditioned => &["query:"],
        QGenVariant::IterativeStage2 => &["query2:"],
        _ => &["query1:", "query2:"],
    };
    if lines.len() < prefixes.len() {
        return invalid(InvalidReason::ArityMismatch {
            got: lines.len(),
            want: prefixes.len(),
        });
    }
    let mut out = Vec::with_capacity(prefixes.len());
    for ((line, prefix), label) in lines.iter().zip(prefixes).zip(labels) {
        let Some(value) = strip_prefix_ci(line, prefix) else {
            return invalid(InvalidReason::MissingPrefix {
                expected: prefix.to_string(),
            });
        };
        let query = collapse_whitespace(value);
        if query.is_empty() {
            return invalid(InvalidReason::EmptyQuery);
        }
        out.push(ParsedQuery {
            query,
            intended_label: label,
        });
    }
    ParseResult::Valid(out)
}

/// `Label: <name> Query: <q>` once per label, most relevant first.
fn parse_all_labels(lines: &[&str], label_set: &LabelSet) -> ParseResult {
    let want = label_set.len();
    if lines.len() < want {
        return invalid(InvalidReason::ArityMismatch { got: lines.len(), want });
    }
    let mut out = Vec::with_capacity(want);
    for (line, expected) in lines.iter().zip(label_set.labels()) {
        let Some(rest) = strip_prefix_ci(line, "label:") else {
            return invalid(InvalidReason::MissingPrefix {
                expected: "Label:".into(),
            });
        };
        let Some(at) = find_ci(rest, "query:") else {
            return invalid(InvalidReason::MissingPrefix {
                expected: "Query:".into(),
            });
        };
        let name = rest[..at].trim();
        let query = collapse_whitespace(&rest[at + "query:".len()..]);
        let Some(label) = label_set.get(name) else {
            return invalid(InvalidReason::UnknownLabel { text: name.to_string() });
        };
        if label != expected {
            return invalid(InvalidReason::OutOfOrderLabel {
                expected: expected.name.clone(),
                got: label.name.clone(),
            });
        }
        if query.is_empty() {
            return invalid(InvalidReason::EmptyQuery);
        }
        out.push(ParsedQuery {
            query,
            intended_label: label.clone(),
        });
    }
    ParseResult::Valid(out)
}
