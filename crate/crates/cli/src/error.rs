use std::path::Path;

use pairgen::backend::BackendError;
use pairgen::baseline::BaselineError;
use pairgen::corpus::CorpusError;
use pairgen::evalmetrics::EvalError;
use pairgen::prompting::PromptError;
use pairgen::retrieval::RetrievalError;
use pairgen::synthgen::SynthError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("backend unreachable: {0}")]
    BackendUnreachable(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("no statistics found: {0}")]
    MissingStats(String),
    #[error("no qrels configured")]
    MissingQrels,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 2 configuration, 3 backend, 4 data.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Backend(_) | CliError::BackendUnreachable(_) => 3,
            CliError::Data(_) | CliError::MissingStats(_) | CliError::MissingQrels | CliError::Io { .. } => 4,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::Config(m) => CliError::Config(m),
            BackendError::Unreachable(m) => CliError::BackendUnreachable(m),
            other => CliError::Backend(other.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Misaligned { .. } => CliError::Data(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<PromptError> for CliError {
    fn from(e: PromptError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<RetrievalError> for CliError {
    fn from(e: RetrievalError) -> Self {
        match e {
            RetrievalError::Params(m) => CliError::Config(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Config(m) => CliError::Config(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<BaselineError> for CliError {
    fn from(e: BaselineError) -> Self {
        match e {
            BaselineError::Config(m) => CliError::Config(m),
            other => CliError::Data(other.to_string()),
        }
    }
}
