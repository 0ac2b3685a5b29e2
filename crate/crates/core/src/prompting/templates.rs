use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{PromptError, QGenVariant};

/// Name of the document field in rendered blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocField {
    /// Web passages (BEIR-style corpora).
    Passage,
    /// Shopping products.
    Product,
}

impl DocField {
    pub fn as_str(self) -> &'static str {
        match self {
            DocField::Passage => "passage",
            DocField::Product => "product",
        }
    }
}

impl fmt::Display for DocField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DocField {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "passage" => Ok(DocField::Passage),
            "product" => Ok(DocField::Product),
            other => Err(PromptError::Template(format!("unknown document field {other:?}"))),
        }
    }
}

/// Instruction-key for a prompt kind. Iterative stage 2 shares the
/// pairwise instruction.
pub fn instruction_key(variant: &QGenVariant) -> &'static str {
    match variant {
        QGenVariant::RelevantOnly => "relevant-only",
        QGenVariant::LabelConditioned => "label-conditioned",
        QGenVariant::Pairwise | QGenVariant::IterativeStage2 => "pairwise",
        QGenVariant::PairwiseLabelPair(..) => "label-pair",
        QGenVariant::AllLabels => "all-labels",
    }
}

pub const FILTER_KEY: &str = "filter";

const KNOWN_KEYS: [&str; 6] = [
    "relevant-only",
    "label-conditioned",
    "pairwise",
    "label-pair",
    "all-labels",
    FILTER_KEY,
];

pub const DEFAULT_MAX_DOC_CHARS: usize = 4000;

const PRODUCT_LABELS: &str = "The four relevance labels are 'Exact' which means that the item is relevant for the query, and satisfies all the query specifications.\n\
'Substitute' means that the item is somewhat relevant, i.e., it fails to fulfill some aspects of the query but the item can be used as a functional substitute.\n\
'Complement' means that the item does not fulfill the query, but could be used in combination with an exact item.\n\
'Irrelevant' means that the item is irrelevant, or it fails to fulfill a central aspect of the query.";

/// Instruction headers and rendering options for one document style.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub field: DocField,
    pub max_doc_chars: usize,
    pub instructions: BTreeMap<String, String>,
}

impl TemplateSet {
    /// Web-passage templates for binary relevance.
    pub fn passage() -> Self {
        let instructions = [
            (
                "relevant-only",
                "Given a passage from a web page, generate a search query for which the passage can be a perfect answer.".to_string(),
            ),
            (
                "label-conditioned",
                "Given a passage from a web page and a relevance label, generate a search query appropriate for that relevance level for that passage.\n\
If the label is \"relevant\", the query should be such that the passage can be a perfect answer and if the label is \"irrelevant\" the query should be such that the passage is not a perfect answer.".to_string(),
            ),
            (
                "pairwise",
                "Given a passage from a web page, generate a search query for which the passage can be a perfect answer and a search query for which the passage is not a perfect answer.".to_string(),
            ),
            (
                "label-pair",
                "Given a passage from a web page and two relevance labels, generate query1 for the first label and query2 for the second label.".to_string(),
            ),
            (
                "all-labels",
                "Given a passage from a web page, generate a unique query for each relevance label, in decreasing order of relevance.".to_string(),
            ),
            (
                FILTER_KEY,
                "Given a search query and a passage from a web page, predict whether the passage is \"relevant\" or \"irrelevant\" to the query.\n\
The passage is relevant if it can be a perfect answer to the query.".to_string(),
            ),
        ];
        Self::from_pairs(DocField::Passage, instructions)
    }

    /// Product templates for the four-label shopping scale.
    pub fn product() -> Self {
        let instructions = [
            (
                "relevant-only",
                "Given a product generate a query that exactly matches the product specifications:".to_string(),
            ),
            (
                "label-conditioned",
                format!("Given a product and desired relevance label generate a query that is appropriate for that relevance label.\n{PRODUCT_LABELS}\nSome examples are:"),
            ),
            (
                "pairwise",
                "Given a product, generate a query that exactly matches the product and a query for which the product is irrelevant.".to_string(),
            ),
            (
                "label-pair",
                format!("Given a product and a desired relevance label, the task is to generate two unique query for each relevance label.\n{PRODUCT_LABELS}"),
            ),
            (
                "all-labels",
                format!("Given a product and a desired relevance label, the task is to generate a unique query for each relevance label.\n{PRODUCT_LABELS}"),
            ),
            (
                FILTER_KEY,
                format!("Given a query and a product, predict the relevance label of the product for the query.\n{PRODUCT_LABELS}"),
            ),
        ];
        Self::from_pairs(DocField::Product, instructions)
    }

    pub fn for_field(field: DocField) -> Self {
        match field {
            DocField::Passage => Self::passage(),
            DocField::Product => Self::product(),
        }
    }

    fn from_pairs<const N: usize>(field: DocField, pairs: [(&str, String); N]) -> Self {
        Self {
            field,
            max_doc_chars: DEFAULT_MAX_DOC_CHARS,
            instructions: pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }
    }

    pub fn instruction(&self, key: &str) -> Result<&str, PromptError> {
        self.instructions
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| PromptError::Template(format!("no instruction for {key:?}")))
    }

    /// Replace instructions from a JSON object keyed by prompt kind
    /// (`relevant-only`, `label-conditioned`, `pairwise`, `label-pair`,
    /// `all-labels`, `filter`).
    pub fn apply_overrides(&mut self, overrides: &BTreeMap<String, String>) -> Result<(), PromptError> {
        for (key, text) in overrides {
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(PromptError::Template(format!("unknown template key {key:?}")));
            }
            if text.trim().is_empty() {
                return Err(PromptError::Template(format!("empty instruction for {key:?}")));
            }
            self.instructions.insert(key.clone(), text.clone());
        }
        Ok(())
    }

    pub fn load_overrides(&mut self, path: impl AsRef<Path>) -> Result<(), PromptError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path)
            .map_err(|e| PromptError::Io(format!("{}: {e}", path.display())))?;
        let overrides: BTreeMap<String, String> = serde_json::from_str(&raw)
            .map_err(|e| PromptError::Template(format!("{}: {e}", path.display())))?;
        self.apply_overrides(&overrides)
    }
}
