//! Exemplar selection and byte-exact prompt rendering for every query
//! generation formulation and for the consistency filter.
//!
//! Layout: the instruction header, one block per demonstration and the
//! target block, separated by single blank lines. Each block is a run of
//! `field: value` lines; the target block ends with an unanswered cue line
//! such as `query1: ` that the model continues.

mod exemplars;
mod labels;
mod render;
mod templates;

use thiserror::Error;

pub use exemplars::{
    build_exemplar_set, build_filter_set, load_labeled_pairs, Exemplar, ExemplarEntry, ExemplarSet,
    LabeledPair, MIN_SHOTS_PER_FINE_LABEL, SHOTS, SHOTS_PER_BINARY_LABEL,
};
pub use labels::{LabelSet, QGenVariant, RelevanceLabel};
pub use render::{render_filter_prompt, render_generation_prompt, PromptMeta, RenderedPrompt, TruncationEvent};
pub use templates::{instruction_key, DocField, TemplateSet, DEFAULT_MAX_DOC_CHARS, FILTER_KEY};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("not enough exemplars labeled {0}")]
    InsufficientExemplars(String),
    #[error("wrong label set: {0}")]
    WrongLabelSet(String),
    #[error("invalid label set: {0}")]
    InvalidLabelSet(String),
    #[error("label {0:?} is not in the label set")]
    UnknownLabel(String),
    #[error("unknown variant {0:?}")]
    UnknownVariant(String),
    #[error("label-conditioned prompt needs a target label")]
    MissingLabel,
    #[error("iterative prompt needs the prior relevant query")]
    MissingPriorQuery,
    #[error("filter prompt needs a non-empty query")]
    MissingQuery,
    #[error("{0} is not used by this prompt variant")]
    UnexpectedInput(&'static str),
    #[error("invalid exemplar: {0}")]
    InvalidExemplar(String),
    #[error("template: {0}")]
    Template(String),
    #[error("io: {0}")]
    Io(String),
}
