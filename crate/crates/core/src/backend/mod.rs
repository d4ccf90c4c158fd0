//! Generation backends: live chat-completion HTTP, scripted replay and a
//! seeded synthetic simulator.

mod limit;
mod live;
mod replay;
mod synthetic;

pub use limit::Limited;
pub use live::{HttpResponse, HttpTransport, LiveBackend, UreqTransport, API_KEY_ENV};
pub use replay::{CallLogEntry, ReplayBackend, Script};
pub use synthetic::{PoolEntry, SyntheticBackend, SyntheticProfile};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue::GenerationRequest;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("short batch: expected {expected} decodes, got {got}")]
    ShortBatch { expected: usize, got: usize },
    #[error("oversized batch: expected {expected} decodes, got {got}")]
    OversizedBatch { expected: usize, got: usize },
    #[error("no scripted decodes for {step} step (fingerprint {fingerprint})")]
    ScriptMiss { step: String, fingerprint: String },
    #[error("transport failed after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint returned status {status} after {attempts} attempts: {body}")]
    Status { status: u16, attempts: u32, body: String },
    #[error("malformed endpoint response: {0}")]
    Protocol(String),
    #[error("cannot infer step kind from the dialogue tail")]
    UnknownStep,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decode {
    pub text: String,
    pub index: usize,
}

pub trait Backend: Send + Sync {
    /// Raw decode texts in backend order.
    fn sample(&self, request: &GenerationRequest) -> Result<Vec<String>, BackendError>;

    /// Exactly `n_samples` decodes or an error.
    fn generate(&self, request: &GenerationRequest) -> Result<Vec<Decode>, BackendError> {
        validate(request)?;
        let texts = self.sample(request)?;
        let expected = request.n_samples;
        if texts.len() < expected {
            return Err(BackendError::ShortBatch { expected, got: texts.len() });
        }
        if texts.len() > expected {
            return Err(BackendError::OversizedBatch { expected, got: texts.len() });
        }
        Ok(texts
            .into_iter()
            .enumerate()
            .map(|(index, text)| Decode { text, index })
            .collect())
    }

    /// Whether identical requests (and seeds) give identical decodes.
    fn deterministic(&self) -> bool {
        true
    }

    /// Total retries performed so far.
    fn retry_count(&self) -> u64 {
        0
    }
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn sample(&self, request: &GenerationRequest) -> Result<Vec<String>, BackendError> {
        (**self).sample(request)
    }

    fn generate(&self, request: &GenerationRequest) -> Result<Vec<Decode>, BackendError> {
        (**self).generate(request)
    }

    fn deterministic(&self) -> bool {
        (**self).deterministic()
    }

    fn retry_count(&self) -> u64 {
        (**self).retry_count()
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn sample(&self, request: &GenerationRequest) -> Result<Vec<String>, BackendError> {
        (**self).sample(request)
    }

    fn generate(&self, request: &GenerationRequest) -> Result<Vec<Decode>, BackendError> {
        (**self).generate(request)
    }

    fn deterministic(&self) -> bool {
        (**self).deterministic()
    }

    fn retry_count(&self) -> u64 {
        (**self).retry_count()
    }
}

pub fn validate(request: &GenerationRequest) -> Result<(), BackendError> {
    if request.n_samples == 0 {
        return Err(BackendError::InvalidRequest("n_samples must be at least 1".into()));
    }
    if request.dialogue.is_empty() {
        return Err(BackendError::InvalidRequest("dialogue is empty".into()));
    }
    if request.temperature.is_nan() || request.temperature < 0.0 {
        return Err(BackendError::InvalidRequest("temperature must be non-negative".into()));
    }
    if request.max_tokens == 0 {
        return Err(BackendError::InvalidRequest("max_tokens must be positive".into()));
    }
    if request.top_k == Some(0) {
        return Err(BackendError::InvalidRequest("top_k must be positive".into()));
    }
    Ok(())
}
