//! The text-generation / label-scoring contract and its two
//! implementations: a JSON-over-HTTP client and a deterministic mock.

mod mock;
mod remote;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompting::RenderedPrompt;

pub use mock::{MockBackend, MockBehavior};
pub use remote::{
    Gate, GatePass, GenerateRequest, GenerateResponse, GeneratedText, RemoteBackend, RetryPolicy, ScoreRequest, ScoreResponse,
};

/// Environment variable holding the remote endpoint base URL.
pub const ENV_BACKEND_URL: &str = "QGEN_BACKEND_URL";
/// Environment variable holding the bearer token.
pub const ENV_BACKEND_TOKEN: &str = "QGEN_BACKEND_TOKEN";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("request timed out")]
    Timeout,
    #[error("http status {0}")]
    Http(u16),
    #[error("backend returned {got} of {want} outputs")]
    PartialResponse { got: usize, want: usize },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("backend unreachable: {0}")]
    Unreachable(String),
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("no continuations to score")]
    EmptyContinuations,
    #[error("invalid backend configuration: {0}")]
    Config(String),
}

impl BackendError {
    /// Whether a retry could plausibly succeed.
    pub fn is_transient(&self) -> bool {
        match self {
            BackendError::Timeout => true,
            BackendError::Http(status) => *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub temperature: f64,
    pub num_outputs: usize,
    pub max_tokens: usize,
    pub stop_sequences: Vec<String>,
}

impl Default for GenerationParams {
    /// Temperature 0.6 with two outputs per prompt.
    fn default() -> Self {
        Self {
            temperature: 0.6,
            num_outputs: 2,
            max_tokens: 128,
            stop_sequences: Vec::new(),
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), BackendError> {
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(BackendError::Config("temperature must be a finite value >= 0".into()));
        }
        if self.num_outputs == 0 || self.max_tokens == 0 {
            return Err(BackendError::Config("num_outputs and max_tokens must be >= 1".into()));
        }
        Ok(())
    }

    /// Greedy single-output settings used for generation-mode filtering.
    pub fn greedy_label() -> Self {
        Self {
            temperature: 0.0,
            num_outputs: 1,
            max_tokens: 8,
            stop_sequences: vec!["\n".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub output_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Remote,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_model")]
    pub model_name: String,
    #[serde(default = "default_timeout_secs")]
    pub request_timeout_secs: f64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

fn default_model() -> String {
    "default".into()
}

fn default_timeout_secs() -> f64 {
    60.0
}

fn default_in_flight() -> usize {
    8
}

impl BackendDescriptor {
    pub fn mock() -> Self {
        Self {
            kind: BackendKind::Mock,
            endpoint: None,
            model_name: "mock".into(),
            request_timeout_secs: default_timeout_secs(),
            max_in_flight: default_in_flight(),
        }
    }

    pub fn remote(endpoint: impl Into<String>) -> Self {
        Self {
            kind: BackendKind::Remote,
            endpoint: Some(endpoint.into()),
            ..Self::mock()
        }
    }

    pub fn request_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.request_timeout_secs)
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.max_in_flight == 0 {
            return Err(BackendError::Config("max_in_flight must be >= 1".into()));
        }
        if !(self.request_timeout_secs.is_finite() && self.request_timeout_secs > 0.0) {
            return Err(BackendError::Config("request timeout must be positive".into()));
        }
        if self.kind == BackendKind::Remote && self.endpoint.as_deref().is_none_or(str::is_empty) {
            return Err(BackendError::Config("remote backend requires an endpoint".into()));
        }
        Ok(())
    }
}

/// Text generation and continuation scoring. Implementations are shared
/// across worker threads.
pub trait Backend: Send + Sync {
    /// Exactly `params.num_outputs` completions, each cut at the first stop
    /// sequence.
    fn generate(&self, prompt: &RenderedPrompt, params: &GenerationParams) -> Result<Vec<Completion>, BackendError>;

    /// One finite score (log-likelihood or comparable) per continuation,
    /// aligned with the input order.
    fn score(&self, prompt: &RenderedPrompt, continuations: &[String]) -> Result<Vec<f64>, BackendError>;

    /// Cheap reachability probe run before any output is written.
    fn health_check(&self) -> Result<(), BackendError> {
        Ok(())
    }
}

/// Cut `text` at the earliest occurrence of any stop sequence.
pub fn truncate_at_stop(text: &str, stops: &[String]) -> String {
    let cut = stops
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()))
        .min()
        .unwrap_or(text.len());
    text[..cut].to_string()
}

pub(crate) fn check_continuations(continuations: &[String]) -> Result<(), BackendError> {
    if continuations.is_empty() || continuations.iter().any(|c| c.is_empty()) {
        return Err(BackendError::EmptyContinuations);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stop_sequences_cut_at_earliest() {
        let stops = vec!["\n\n".to_string(), "END".to_string()];
        assert_eq!(truncate_at_stop("a\nbEND\n\nc", &stops), "a\nb");
        assert_eq!(truncate_at_stop("plain", &stops), "plain");
        assert_eq!(truncate_at_stop("x", &[]), "x");
    }

    #[test]
    fn defaults_match_generation_setting() {
        let p = GenerationParams::default();
        assert_eq!(p.temperature, 0.6);
        assert_eq!(p.num_outputs, 2);
        assert!(p.validate().is_ok());
        assert!(GenerationParams { num_outputs: 0, ..p }.validate().is_err());
    }

    #[test]
    fn remote_descriptor_requires_endpoint() {
        let mut d = BackendDescriptor::remote("");
        assert!(d.validate().is_err());
        d.endpoint = Some("http://localhost:1".into());
        assert!(d.validate().is_ok());
        assert!(BackendDescriptor::mock().validate().is_ok());
    }

    #[test]
    fn transient_classification() {
        assert!(BackendError::Timeout.is_transient());
        assert!(BackendError::Http(503).is_transient());
        assert!(!BackendError::Http(404).is_transient());
        assert!(!BackendError::Protocol("x".into()).is_transient());
    }
}
