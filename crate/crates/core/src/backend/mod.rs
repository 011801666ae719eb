//! Text-generation backends behind a single completion contract.
//!
//! A [`Backend`] takes a [`CompletionRequest`] and returns the provider's
//! text verbatim. Three implementations ship: [`HttpBackend`] for
//! OpenAI-compatible chat-completions endpoints, [`MockBackend`] for
//! deterministic offline runs, and [`CachedBackend`] which wraps either with
//! a content-addressed on-disk response cache.

mod cache;
mod http;
mod mock;

pub use cache::{CacheKey, CachedBackend, ResponseCache};
pub use http::{HttpBackend, API_KEY_ENV, BASE_URL_ENV};
pub use mock::{MockBackend, MockRule};

use std::sync::Arc;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("provider error (status {status}): {body}")]
    Provider { status: u16, body: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("mock script exhausted")]
    ScriptExhausted,
    #[error("no mock rule matches prompt: {0}")]
    NoMatchingRule(String),
}

impl BackendError {
    /// Transient failures are retried; everything else surfaces immediately.
    pub fn is_transient(&self) -> bool {
        match self {
            BackendError::RateLimited(_) | BackendError::Transport(_) => true,
            BackendError::Provider { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

/// One completion call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model_id: String,
    pub system_text: String,
    pub user_text: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
}

impl CompletionRequest {
    pub fn new(
        model_id: impl Into<String>,
        system_text: impl Into<String>,
        user_text: impl Into<String>,
    ) -> Self {
        Self {
            model_id: model_id.into(),
            system_text: system_text.into(),
            user_text: user_text.into(),
            temperature: 0.0,
            max_tokens: 4096,
            seed: None,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.user_text.trim().is_empty() {
            return Err(BackendError::InvalidRequest("empty user_text".into()));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens must be positive".into()));
        }
        if self.temperature < 0.0 {
            return Err(BackendError::InvalidRequest("negative temperature".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Provider text, unmodified, plus accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub model_id: String,
    pub usage: Usage,
    pub cached: bool,
}

/// The completion contract. Implementations must tolerate concurrent calls.
pub trait Backend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError>;

    /// Stable identifier recorded in assessment audit trails.
    fn id(&self) -> String;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        (**self).complete(request)
    }

    fn id(&self) -> String {
        (**self).id()
    }
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        (**self).complete(request)
    }

    fn id(&self) -> String {
        (**self).id()
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        (**self).complete(request)
    }

    fn id(&self) -> String {
        (**self).id()
    }
}

/// Retry schedule for transient failures: exponential backoff with jitter.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    /// Total attempts, including the first.
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_secs(1),
            jitter: true,
        }
    }
}

/// Run `op`, retrying transient failures per `policy`. Non-transient errors
/// and exhausted attempts return the last error.
pub fn with_retry<T>(
    policy: &RetryPolicy,
    mut op: impl FnMut() -> Result<T, BackendError>,
) -> Result<T, BackendError> {
    let mut attempt = 0u32;
    loop {
        attempt += 1;
        match op() {
            Ok(value) => return Ok(value),
            Err(err) if err.is_transient() && attempt < policy.max_attempts => {
                let exp_ms = policy.base_delay.as_millis() as u64 * (1u64 << (attempt - 1));
                let jitter_ms = if policy.jitter && exp_ms > 0 {
                    rand::thread_rng().gen_range(0..=exp_ms / 2)
                } else {
                    0
                };
                log::warn!("transient backend failure (attempt {attempt}): {err}; retrying");
                std::thread::sleep(Duration::from_millis(exp_ms + jitter_ms));
            }
            Err(err) => return Err(err),
        }
    }
}
