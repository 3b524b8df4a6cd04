//! Chat-completion providers.
//!
//! [`Backend`] is the provider abstraction. [`MockBackend`] is an offline,
//! deterministic keyword scorer; [`HttpBackend`] speaks the JSON
//! chat-completion wire format. [`CachedBackend`] wraps either with a
//! content-addressed, append-only JSONL cache.

mod cache;
mod http;
mod mock;

pub use cache::{CachedBackend, CachedResponse, ResponseCache};
pub use http::{HttpBackend, HttpConfig, PerMinuteBudget, RetryPolicy, TokenBudget};
pub use mock::{mock_complete, MockBackend};

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_TEMPERATURE: f64 = 0.7;
pub const DEFAULT_COMPLETIONS: u32 = 3;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 8;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("network error after {attempts} attempt(s): {message}")]
    Network { attempts: u32, message: String },
    #[error("provider refused the request (status {status}): {message}")]
    Refusal { status: u16, message: String },
    #[error("provider returned an empty response")]
    EmptyResponse,
    #[error("malformed provider response: {0}")]
    Protocol(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("cache i/o: {0}")]
    Cache(#[from] std::io::Error),
}

impl BackendError {
    /// Errors worth retrying.
    pub fn is_transient(&self) -> bool {
        matches!(self, BackendError::Network { .. })
    }
}

/// One sample request. `completion_index` distinguishes the N samples drawn
/// for the same prompt so each gets its own cache key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub system_message: String,
    pub user_message: String,
    pub model_name: String,
    pub temperature: f64,
    pub completion_index: u32,
}

impl CompletionRequest {
    /// SHA-256 over a canonical JSON encoding with fixed key order.
    /// `-0.0` temperature canonicalizes to `0.0`.
    pub fn digest(&self) -> String {
        let temperature = if self.temperature == 0.0 { 0.0 } else { self.temperature };
        let canonical = serde_json::json!([
            "v1",
            self.system_message,
            self.user_message,
            self.model_name,
            temperature,
            self.completion_index,
        ]);
        hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
    }

    pub fn with_index(&self, completion_index: u32) -> Self {
        CompletionRequest {
            completion_index,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(BackendError::InvalidRequest(format!(
                "temperature must be finite and >= 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

pub trait Backend: Send + Sync {
    /// Identifier recorded in cache entries and run metadata.
    fn id(&self) -> String;

    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn id(&self) -> String {
        (**self).id()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

/// Issues `n` requests with completion indices `0..n`, in order. The first
/// hard failure is returned.
pub fn complete_n<B: Backend + ?Sized>(
    backend: &B,
    base: &CompletionRequest,
    n: u32,
) -> Result<Vec<String>, BackendError> {
    if n == 0 {
        return Err(BackendError::InvalidRequest("n must be >= 1".into()));
    }
    (0..n).map(|i| backend.complete(&base.with_index(i))).collect()
}

/// Counts calls reaching the wrapped backend.
pub struct Counting<B> {
    inner: B,
    calls: AtomicUsize,
}

impl<B> Counting<B> {
    pub fn new(inner: B) -> Self {
        Counting {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::SeqCst);
    }
}

impl<B: Backend> Backend for Counting<B> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(request)
    }
}
