//! Completion parsing, round-trip consistency filtering, deduplication,
//! stage statistics and the per-variant generation flows.

mod filter;
mod journal;
mod parse;
mod pipeline;
mod stats;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::BackendError;
use crate::prompting::{PromptError, QGenVariant, RelevanceLabel};

pub use filter::{consistency_filter, dedup, parse_label, predict_label_generation, predict_label_scoring, FilterMode};
pub use journal::{ItemStore, MemoryStore, ProgressLog};
pub use parse::parse_completion;
pub use pipeline::{
    default_pair_schedule, run_variant, AuditRecord, FailureEvent, Flow, FlowSets, ItemOutcome, NegativeMiner,
    PipelineSpec, RunOptions, RunOutput,
};
pub use stats::{format_ratio, render_stats_table, round2, StageStats, StatsRow};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{candidates} candidates but {predictions} predictions")]
    Misaligned { candidates: usize, predictions: usize },
    #[error("progress log: {0}")]
    Journal(String),
    #[error("halted after {completed} new items")]
    Halted { completed: usize },
}

/// Why a completion could not be turned into candidate queries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InvalidReason {
    MissingPrefix { expected: String },
    /// The output starts a new document block instead of stopping.
    GarbageContinuation,
    EmptyQuery,
    ArityMismatch { got: usize, want: usize },
    UnknownLabel { text: String },
    /// A known label in the wrong slot of an all-labels output.
    OutOfOrderLabel { expected: String, got: String },
}

impl fmt::Display for InvalidReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InvalidReason::MissingPrefix { expected } => write!(f, "missing prefix {expected:?}"),
            InvalidReason::GarbageContinuation => f.write_str("garbage continuation"),
            InvalidReason::EmptyQuery => f.write_str("empty query"),
            InvalidReason::ArityMismatch { got, want } => write!(f, "arity mismatch ({got} of {want})"),
            InvalidReason::UnknownLabel { text } => write!(f, "unknown label {text:?}"),
            InvalidReason::OutOfOrderLabel { expected, got } => write!(f, "label {got} where {expected} was expected"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedQuery {
    pub query: String,
    pub intended_label: RelevanceLabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParseResult {
    Valid(Vec<ParsedQuery>),
    Invalid(InvalidReason),
}

impl ParseResult {
    pub fn is_valid(&self) -> bool {
        matches!(self, ParseResult::Valid(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Generate,
    /// Second prompt of the iterative flow.
    Iterative,
    MinedNegative,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Iterative => "iterative",
            Stage::MinedNegative => "mined-negative",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One parsed backend output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub doc_id: String,
    pub variant: QGenVariant,
    pub stage: Stage,
    /// Position of the prompt among the prompts issued for this document in
    /// this stage (label-conditioned and iterative flows issue several).
    pub prompt_index: usize,
    pub output_index: usize,
    pub raw_text: String,
    pub parse: ParseResult,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub query: String,
    pub doc_id: String,
    pub intended_label: RelevanceLabel,
    pub variant: QGenVariant,
    pub stage: Stage,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LabelPrediction {
    Label(RelevanceLabel),
    Tie,
    /// Generation-mode output that names no label.
    Unknown(String),
    Failed(BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Retained,
    DroppedLabelMismatch,
    /// Tied scores or an unparseable label.
    DroppedTie,
    /// The filter request failed after retries.
    DroppedFilterError,
    DroppedDuplicateConflict,
    /// Later copy of a query already kept with the same label.
    DroppedDuplicate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticExample {
    pub query: String,
    pub doc_id: String,
    pub label: RelevanceLabel,
    pub variant: QGenVariant,
    pub verdict: Verdict,
    pub stage: Stage,
}

impl SyntheticExample {
    pub fn is_retained(&self) -> bool {
        self.verdict == Verdict::Retained
    }
}
