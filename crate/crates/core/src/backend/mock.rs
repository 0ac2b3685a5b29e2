use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{check_continuations, truncate_at_stop, Backend, BackendError, Completion, GenerationParams};
use crate::prompting::{QGenVariant, RenderedPrompt};
use crate::text::{derive_seed, fnv1a64, fnv1a64_extend, tokenize, SplitMix64};

const OFF_TOPIC: [&str; 40] = [
    "weather", "recipe", "football", "guitar", "holiday", "mortgage", "lyrics", "volcano", "penguin", "origami",
    "karaoke", "sailing", "chess", "tattoo", "lottery", "jazz", "skateboard", "wedding", "poetry", "telescope",
    "bakery", "marathon", "casino", "fishing", "ballet", "wallpaper", "camping", "knitting", "surfing", "pottery",
    "vinyl", "cricket", "lantern", "puzzle", "tulip", "saxophone", "igloo", "rodeo", "sushi", "zeppelin",
];

/// Knobs for [`MockBackend`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockBehavior {
    /// Probability that a generated completion is malformed.
    pub invalid_rate: f64,
    /// Probability that a generation request fails with HTTP 503.
    pub failure_rate: f64,
    /// Probability that a filter request (score, or generate on a filter
    /// prompt) fails with HTTP 503.
    pub filter_failure_rate: f64,
    /// Probability that a query is written for a different label than the
    /// one it is emitted under.
    pub label_noise: f64,
    /// Words per generated query.
    pub query_terms: usize,
    /// Vocabulary for the parts of a query not drawn from the document.
    pub off_topic: Vec<String>,
    /// Canned completions keyed by variant name (or `filter`); when present
    /// they replace the synthesized valid completion.
    pub responses: BTreeMap<String, Vec<String>>,
}

impl Default for MockBehavior {
    fn default() -> Self {
        Self {
            invalid_rate: 0.0,
            failure_rate: 0.0,
            filter_failure_rate: 0.0,
            label_noise: 0.15,
            query_terms: 4,
            off_topic: OFF_TOPIC.iter().map(|w| w.to_string()).collect(),
            responses: BTreeMap::new(),
        }
    }
}

impl MockBehavior {
    pub fn validate(&self) -> Result<(), BackendError> {
        for (name, rate) in [
            ("invalid_rate", self.invalid_rate),
            ("failure_rate", self.failure_rate),
            ("filter_failure_rate", self.filter_failure_rate),
            ("label_noise", self.label_noise),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(BackendError::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.query_terms == 0 {
            return Err(BackendError::Config("query_terms must be >= 1".into()));
        }
        Ok(())
    }
}

/// Deterministic stand-in for a language model.
///
/// Every output is a pure function of the seed, the FNV-1a hash of the
/// prompt text and the output index. Queries are built from document words
/// in proportion to the intended label's relevance, and the scorer compares
/// a query's document coverage with each label's relevance, so the
/// round-trip filter behaves sensibly.
#[derive(Debug, Clone)]
pub struct MockBackend {
    seed: u64,
    behavior: MockBehavior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Fault {
    Garbage,
    EmptyQuery,
    ArityMismatch,
    MissingPrefix,
    UnknownLabel,
}

impl MockBackend {
    pub fn new(seed: u64, behavior: MockBehavior) -> Result<Self, BackendError> {
        behavior.validate()?;
        Ok(Self {
            seed: derive_seed(seed, "mock-backend"),
            behavior,
        })
    }

    pub fn behavior(&self) -> &MockBehavior {
        &self.behavior
    }

    fn rng(&self, prompt_hash: u64, purpose: &str, index: u64) -> SplitMix64 {
        let h = fnv1a64_extend(self.seed ^ prompt_hash, purpose.as_bytes());
        let mut rng = SplitMix64::new(h ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        rng.next_u64();
        rng
    }

    fn fails(&self, prompt_hash: u64, rate: f64) -> bool {
        rate > 0.0 && self.rng(prompt_hash, "fail", 0).next_f64() < rate
    }

    fn off_topic_words(&self, doc: &BTreeSet<String>) -> Vec<String> {
        self.behavior
            .off_topic
            .iter()
            .map(|w| w.to_lowercase())
            .filter(|w| !w.is_empty() && !doc.contains(w))
            .collect()
    }

    /// A query whose share of document words is about `fraction`.
    fn make_query(&self, doc_words: &[String], off: &[String], fraction: f64, rng: &mut SplitMix64) -> String {
        let len = self.behavior.query_terms;
        let from_doc = ((fraction * len as f64).round() as usize).min(doc_words.len());
        let mut words = Vec::with_capacity(len);
        let mut pool = doc_words.to_vec();
        rng.partial_shuffle(&mut pool, from_doc);
        words.extend(pool.into_iter().take(from_doc));
        let mut pool = off.to_vec();
        let rest = (len - from_doc).min(pool.len());
        rng.partial_shuffle(&mut pool, rest);
        words.extend(pool.into_iter().take(rest));
        if words.is_empty() {
            words.push("query".to_string());
        }
        rng.shuffle(&mut words);
        words.join(" ")
    }

    fn intended_labels(variant: &QGenVariant, prompt: &RenderedPrompt) -> Vec<String> {
        let labels = &prompt.meta.labels;
        let top = labels.first().cloned().unwrap_or_default();
        let bottom = labels.last().cloned().unwrap_or_default();
        match variant {
            QGenVariant::RelevantOnly => vec![top],
            QGenVariant::LabelConditioned => vec![prompt.meta.target_label.clone().unwrap_or(top)],
            QGenVariant::Pairwise => vec![top, bottom],
            QGenVariant::IterativeStage2 => vec![bottom],
            QGenVariant::PairwiseLabelPair(a, b) => vec![a.clone(), b.clone()],
            QGenVariant::AllLabels => labels.clone(),
        }
    }

    fn fraction(labels: &[String], name: &str) -> f64 {
        let pos = labels.iter().position(|l| l.eq_ignore_ascii_case(name)).unwrap_or(0);
        if labels.len() < 2 {
            return 1.0;
        }
        1.0 - pos as f64 / (labels.len() - 1) as f64
    }

    /// The queries a well-behaved model would write, one per intended label.
    fn queries(&self, variant: &QGenVariant, prompt: &RenderedPrompt, rng: &mut SplitMix64) -> Vec<(String, String)> {
        let labels = &prompt.meta.labels;
        let doc_words = distinct_tokens(&prompt.meta.target_text);
        let doc_set: BTreeSet<String> = doc_words.iter().cloned().collect();
        let off = self.off_topic_words(&doc_set);
        Self::intended_labels(variant, prompt)
            .into_iter()
            .map(|label| {
                let mut written_for = label.clone();
                if labels.len() > 1 && rng.next_f64() < self.behavior.label_noise {
                    let others: Vec<&String> = labels.iter().filter(|l| !l.eq_ignore_ascii_case(&label)).collect();
                    written_for = others[rng.below(others.len() as u64) as usize].clone();
                }
                let q = self.make_query(&doc_words, &off, Self::fraction(labels, &written_for), rng);
                (label, q)
            })
            .collect()
    }

    /// Completion lines (without the cue) for a valid output.
    fn valid_lines(variant: &QGenVariant, queries: &[(String, String)]) -> Vec<String> {
        match variant {
            QGenVariant::RelevantOnly | QGenVariant::LabelConditioned | QGenVariant::IterativeStage2 => {
                vec![queries[0].1.clone()]
            }
            QGenVariant::Pairwise | QGenVariant::PairwiseLabelPair(..) => {
                vec![queries[0].1.clone(), format!("query2: {}", queries[1].1)]
            }
            QGenVariant::AllLabels => queries
                .iter()
                .enumerate()
                .map(|(i, (label, q))| {
                    if i == 0 {
                        format!("{label} Query: {q}")
                    } else {
                        format!("Label: {label} Query: {q}")
                    }
                })
                .collect(),
        }
    }

    fn pick_fault(variant: &QGenVariant, rng: &mut SplitMix64) -> Fault {
        let kinds: &[Fault] = match variant {
            QGenVariant::RelevantOnly | QGenVariant::LabelConditioned | QGenVariant::IterativeStage2 => {
                &[Fault::Garbage, Fault::EmptyQuery]
            }
            QGenVariant::Pairwise | QGenVariant::PairwiseLabelPair(..) => {
                &[Fault::Garbage, Fault::EmptyQuery, Fault::ArityMismatch, Fault::MissingPrefix]
            }
            QGenVariant::AllLabels => {
                // Long multi-label outputs mostly run on into a new document.
                if rng.next_f64() < 0.8 {
                    return Fault::Garbage;
                }
                &[Fault::EmptyQuery, Fault::ArityMismatch, Fault::MissingPrefix, Fault::UnknownLabel]
            }
        };
        kinds[rng.below(kinds.len() as u64) as usize]
    }

    fn corrupt(&self, fault: Fault, variant: &QGenVariant, field: &str, mut lines: Vec<String>, rng: &mut SplitMix64) -> String {
        let all_labels = *variant == QGenVariant::AllLabels;
        match fault {
            Fault::Garbage => {
                let mut pool = self.behavior.off_topic.clone();
                rng.partial_shuffle(&mut pool, 3);
                let title: Vec<_> = pool.into_iter().take(3).collect();
                lines.push(format!("{field}: {} new title", title.join(" ")));
            }
            Fault::EmptyQuery => {
                if all_labels {
                    let first = &lines[0];
                    let cut = first.find(" Query: ").map_or(first.len(), |i| i + " Query: ".len());
                    lines[0] = first[..cut].to_string();
                } else {
                    lines[0] = " ".to_string();
                }
            }
            Fault::ArityMismatch => {
                lines.pop();
            }
            Fault::MissingPrefix => {
                let last = lines.len() - 1;
                lines[last] = if all_labels {
                    lines[last].replacen(" Query: ", " ", 1)
                } else {
                    lines[last].replacen("query2: ", "", 1)
                };
            }
            Fault::UnknownLabel => {
                let last = lines.len() - 1;
                let q = lines[last].split_once(" Query: ").map_or("", |(_, q)| q).to_string();
                lines[last] = format!("Label: Perfect Query: {q}");
            }
        }
        lines.join("\n")
    }

    fn canned(&self, key: &str, rng: &mut SplitMix64) -> Option<String> {
        let options = self.behavior.responses.get(key).filter(|v| !v.is_empty())?;
        Some(options[rng.below(options.len() as u64) as usize].clone())
    }

    fn filter_label(prompt: &RenderedPrompt) -> String {
        let query = prompt.meta.filter_query.as_deref().unwrap_or_default();
        let c = coverage(query, &prompt.meta.target_text);
        let labels = &prompt.meta.labels;
        labels
            .iter()
            .map(|l| (l, (c - Self::fraction(labels, l)).abs()))
            .fold(None::<(&String, f64)>, |best, (l, d)| match best {
                Some((_, bd)) if bd <= d => best,
                _ => Some((l, d)),
            })
            .map(|(l, _)| l.clone())
            .unwrap_or_default()
    }
}

fn distinct_tokens(text: &str) -> Vec<String> {
    let mut seen = BTreeSet::new();
    tokenize(text).into_iter().filter(|t| seen.insert(t.clone())).collect()
}

/// Share of the query's distinct tokens that occur in the document.
pub(crate) fn coverage(query: &str, doc: &str) -> f64 {
    let q: BTreeSet<String> = tokenize(query).into_iter().collect();
    if q.is_empty() {
        return 0.0;
    }
    let d: BTreeSet<String> = tokenize(doc).into_iter().collect();
    q.intersection(&d).count() as f64 / q.len() as f64
}

impl Backend for MockBackend {
    fn generate(&self, prompt: &RenderedPrompt, params: &GenerationParams) -> Result<Vec<Completion>, BackendError> {
        if prompt.text.is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        params.validate()?;
        let hash = fnv1a64(prompt.text.as_bytes());
        let Some(variant) = &prompt.expected_parse else {
            if self.fails(hash, self.behavior.filter_failure_rate) {
                return Err(BackendError::Http(503));
            }
            return Ok((0..params.num_outputs)
                .map(|i| {
                    let mut rng = self.rng(hash, "filter", i as u64);
                    let text = self.canned("filter", &mut rng).unwrap_or_else(|| Self::filter_label(prompt));
                    Completion {
                        text: truncate_at_stop(&text, &params.stop_sequences),
                        output_index: i,
                    }
                })
                .collect());
        };
        if self.fails(hash, self.behavior.failure_rate) {
            return Err(BackendError::Http(503));
        }
        let key = variant.to_string();
        Ok((0..params.num_outputs)
            .map(|i| {
                let mut rng = self.rng(hash, "generate", i as u64);
                let invalid = rng.next_f64() < self.behavior.invalid_rate;
                let queries = self.queries(variant, prompt, &mut rng);
                let lines = match self.canned(&key, &mut rng) {
                    Some(text) => text.lines().map(str::to_string).collect(),
                    None => Self::valid_lines(variant, &queries),
                };
                let text = if invalid && !lines.is_empty() {
                    let fault = Self::pick_fault(variant, &mut rng);
                    self.corrupt(fault, variant, &prompt.meta.field, lines, &mut rng)
                } else {
                    lines.join("\n")
                };
                Completion {
                    text: truncate_at_stop(&text, &params.stop_sequences),
                    output_index: i,
                }
            })
            .collect())
    }

    /// `-(c - r)^2` where `c` is the query's document coverage and `r` the
    /// continuation label's relevance on [0, 1]. Unknown labels score -4.
    /// Prompts without a candidate query score each continuation's own
    /// coverage of the target, shifted to be non-positive.
    fn score(&self, prompt: &RenderedPrompt, continuations: &[String]) -> Result<Vec<f64>, BackendError> {
        if prompt.text.is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        check_continuations(continuations)?;
        let hash = fnv1a64(prompt.text.as_bytes());
        if self.fails(hash, self.behavior.filter_failure_rate) {
            return Err(BackendError::Http(503));
        }
        let target = &prompt.meta.target_text;
        let labels = &prompt.meta.labels;
        Ok(match prompt.meta.filter_query.as_deref() {
            Some(query) => {
                let c = coverage(query, target);
                continuations
                    .iter()
                    .map(|cont| {
                        let name = cont.trim();
                        if labels.iter().any(|l| l.eq_ignore_ascii_case(name)) {
                            -(c - Self::fraction(labels, name)).powi(2)
                        } else {
                            -4.0
                        }
                    })
                    .collect()
            }
            None => continuations.iter().map(|cont| coverage(cont, target) - 1.0).collect(),
        })
    }
}
