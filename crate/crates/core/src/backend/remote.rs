use std::io;
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use ureq::http::Uri;
use ureq::Agent;

use super::{
    check_continuations, truncate_at_stop, Backend, BackendDescriptor, BackendError, BackendKind, Completion,
    GenerationParams, ENV_BACKEND_TOKEN,
};
use crate::prompting::RenderedPrompt;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub model: String,
    pub prompt: String,
    pub temperature: f64,
    pub num_outputs: usize,
    pub max_tokens: usize,
    pub stop: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedText {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub outputs: Vec<GeneratedText>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub model: String,
    pub prompt: String,
    pub continuations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub log_likelihoods: Vec<f64>,
}

/// Sleep schedule between attempts. A request is tried once and then once
/// more after each delay, but only for timeouts and 5xx responses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetryPolicy {
    pub delays: Vec<Duration>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            delays: [1, 2, 4].into_iter().map(Duration::from_secs).collect(),
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self { delays: Vec::new() }
    }

    pub fn run<T>(&self, mut attempt: impl FnMut() -> Result<T, BackendError>) -> Result<T, BackendError> {
        let mut delays = self.delays.iter();
        loop {
            match attempt() {
                Err(e) if e.is_transient() => match delays.next() {
                    Some(d) => std::thread::sleep(*d),
                    None => return Err(e),
                },
                other => return other,
            }
        }
    }
}

/// Counting semaphore bounding outstanding requests.
#[derive(Debug)]
pub struct Gate {
    limit: usize,
    in_use: Mutex<usize>,
    freed: Condvar,
}

pub struct GatePass<'a> {
    gate: &'a Gate,
}

impl Gate {
    pub fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            in_use: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn enter(&self) -> GatePass<'_> {
        let mut n = self.in_use.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.limit {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        GatePass { gate: self }
    }
}

impl Drop for GatePass<'_> {
    fn drop(&mut self) {
        let mut n = self.gate.in_use.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.gate.freed.notify_one();
    }
}

/// JSON-over-HTTP client for `/v1/generate` and `/v1/score`.
///
/// Plain `http://` endpoints only; put a TLS-terminating proxy in front of
/// hosted providers.
#[derive(Debug)]
pub struct RemoteBackend {
    agent: Agent,
    endpoint: String,
    model: String,
    token: Option<String>,
    timeout: Duration,
    gate: Gate,
    retry: RetryPolicy,
}

impl RemoteBackend {
    /// Build a client from a descriptor; the bearer token is read from
    /// `QGEN_BACKEND_TOKEN` when set.
    pub fn new(descriptor: &BackendDescriptor) -> Result<Self, BackendError> {
        descriptor.validate()?;
        if descriptor.kind != BackendKind::Remote {
            return Err(BackendError::Config("descriptor is not a remote backend".into()));
        }
        let endpoint = descriptor.endpoint.clone().unwrap_or_default();
        let uri: Uri = endpoint
            .parse()
            .map_err(|e| BackendError::Config(format!("bad endpoint {endpoint:?}: {e}")))?;
        if uri.scheme_str() != Some("http") || uri.host().is_none() {
            return Err(BackendError::Config(format!("endpoint {endpoint:?} must be an http:// URL")));
        }
        let timeout = descriptor.request_timeout();
        let config = Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        Ok(Self {
            agent: Agent::new_with_config(config),
            endpoint: endpoint.trim_end_matches('/').to_string(),
            model: descriptor.model_name.clone(),
            token: std::env::var(ENV_BACKEND_TOKEN).ok().filter(|t| !t.is_empty()),
            timeout,
            gate: Gate::new(descriptor.max_in_flight),
            retry: RetryPolicy::default(),
        })
    }

    pub fn with_token(mut self, token: Option<String>) -> Self {
        self.token = token;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp, BackendError> {
        self.retry.run(|| {
            let _pass = self.gate.enter();
            let mut req = self.agent.post(format!("{}{path}", self.endpoint));
            if let Some(token) = &self.token {
                req = req.header("Authorization", format!("Bearer {token}"));
            }
            let mut resp = req.send_json(body).map_err(map_error)?;
            let status = resp.status().as_u16();
            if !(200..300).contains(&status) {
                return Err(BackendError::Http(status));
            }
            resp.body_mut().read_json::<Resp>().map_err(|e| match map_error(e) {
                BackendError::Timeout => BackendError::Timeout,
                other => BackendError::Protocol(other.to_string()),
            })
        })
    }
}

fn map_error(e: ureq::Error) -> BackendError {
    match e {
        ureq::Error::Timeout(_) => BackendError::Timeout,
        ureq::Error::StatusCode(s) => BackendError::Http(s),
        ureq::Error::Io(io) => match io.kind() {
            io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock => BackendError::Timeout,
            io::ErrorKind::ConnectionRefused | io::ErrorKind::NotFound => BackendError::Unreachable(io.to_string()),
            _ => BackendError::Protocol(io.to_string()),
        },
        ureq::Error::HostNotFound | ureq::Error::ConnectionFailed => BackendError::Unreachable(e.to_string()),
        other => BackendError::Protocol(other.to_string()),
    }
}

impl Backend for RemoteBackend {
    fn generate(&self, prompt: &RenderedPrompt, params: &GenerationParams) -> Result<Vec<Completion>, BackendError> {
        if prompt.text.is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        params.validate()?;
        let request = GenerateRequest {
            model: self.model.clone(),
            prompt: prompt.text.clone(),
            temperature: params.temperature,
            num_outputs: params.num_outputs,
            max_tokens: params.max_tokens,
            stop: params.stop_sequences.clone(),
        };
        let response: GenerateResponse = self.post("/v1/generate", &request)?;
        if response.outputs.len() < params.num_outputs {
            return Err(BackendError::PartialResponse {
                got: response.outputs.len(),
                want: params.num_outputs,
            });
        }
        Ok(response
            .outputs
            .into_iter()
            .take(params.num_outputs)
            .enumerate()
            .map(|(i, out)| Completion {
                text: truncate_at_stop(&out.text, &params.stop_sequences),
                output_index: i,
            })
            .collect())
    }

    fn score(&self, prompt: &RenderedPrompt, continuations: &[String]) -> Result<Vec<f64>, BackendError> {
        if prompt.text.is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        check_continuations(continuations)?;
        let request = ScoreRequest {
            model: self.model.clone(),
            prompt: prompt.text.clone(),
            continuations: continuations.to_vec(),
        };
        let response: ScoreResponse = self.post("/v1/score", &request)?;
        if response.log_likelihoods.len() != continuations.len() {
            return Err(BackendError::Protocol(format!(
                "expected {} scores, got {}",
                continuations.len(),
                response.log_likelihoods.len()
            )));
        }
        if response.log_likelihoods.iter().any(|s| !s.is_finite()) {
            return Err(BackendError::Protocol("non-finite score".into()));
        }
        Ok(response.log_likelihoods)
    }

    /// Opens (and closes) a TCP connection to the endpoint.
    fn health_check(&self) -> Result<(), BackendError> {
        let uri: Uri = self
            .endpoint
            .parse()
            .map_err(|e| BackendError::Config(format!("bad endpoint: {e}")))?;
        let host = uri.host().unwrap_or_default();
        let port = uri.port_u16().unwrap_or(80);
        let addrs = (host, port)
            .to_socket_addrs()
            .map_err(|e| BackendError::Unreachable(format!("{host}:{port}: {e}")))?;
        let mut last = format!("{host}:{port}: no address");
        for addr in addrs {
            match TcpStream::connect_timeout(&addr, self.timeout.min(Duration::from_secs(10))) {
                Ok(_) => return Ok(()),
                Err(e) => last = format!("{addr}: {e}"),
            }
        }
        Err(BackendError::Unreachable(last))
    }
}
