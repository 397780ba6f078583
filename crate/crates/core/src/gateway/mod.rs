//! Chat-completion access: requests, backends, token accounting,
//! retries and response caching.

mod cache;
#[cfg(feature = "http")]
mod http;
mod ledger;
mod scripted;
mod tokenizer;

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{cache_lookup_or_call, CachingBackend, ResponseCache};
#[cfg(feature = "http")]
pub use http::{OpenAiBackend, API_KEY_ENV};
pub use ledger::*;
pub use scripted::{prompt_hash, ScriptRule, ScriptedBackend};
pub use tokenizer::{count_tokens, Tokenizer};

/// Context window of the reference backend profile.
pub const DEFAULT_CONTEXT_LIMIT: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_tag: String,
    pub system: Option<String>,
    pub user: String,
    pub max_output_tokens: usize,
    pub temperature: f64,
}

impl ChatRequest {
    pub fn new(model_tag: impl Into<String>, user: impl Into<String>, max_output_tokens: usize) -> Self {
        ChatRequest {
            model_tag: model_tag.into(),
            system: None,
            user: user.into(),
            max_output_tokens,
            temperature: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.user.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("user message is empty".into()));
        }
        if self.max_output_tokens < 1 {
            return Err(GatewayError::InvalidRequest("max_output_tokens must be >= 1".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest(
                "temperature must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Prompt tokens under `tokenizer`: system plus user message.
    pub fn prompt_tokens(&self, tokenizer: Tokenizer) -> usize {
        self.system.as_deref().map_or(0, |s| tokenizer.count(s)) + tokenizer.count(&self.user)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    /// Network-level failure; safe to retry.
    #[error("transport: {0}")]
    Transport(String),
    #[error("backend: {0}")]
    Other(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GatewayError {
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("prompt of {prompt_tokens} tokens plus {max_output_tokens} output tokens exceeds context limit {limit}")]
    Overflow {
        prompt_tokens: usize,
        max_output_tokens: usize,
        limit: usize,
    },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("{0}")]
    Backend(String),
    #[error("unknown tokenizer {0:?}")]
    UnknownTokenizer(String),
    #[error("configuration: {0}")]
    Config(String),
}

/// A chat-completion provider.
pub trait Backend: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError>;

    fn context_limit(&self) -> usize {
        DEFAULT_CONTEXT_LIMIT
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_millis(250),
        }
    }
}

impl RetryPolicy {
    pub fn immediate() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::ZERO,
        }
    }
}

/// Calls a backend on behalf of one pipeline stage and books the usage.
///
/// Transport errors are retried with exponential backoff; content is never
/// retried. Requests whose prompt plus output budget exceed the backend's
/// context window fail before any call is made.
pub fn complete(
    backend: &dyn Backend,
    req: &ChatRequest,
    ledger: &mut UsageLedger,
    stage: &str,
    tokenizer: Tokenizer,
    retry: RetryPolicy,
) -> Result<ChatResponse, GatewayError> {
    req.validate()?;
    let prompt_tokens = req.prompt_tokens(tokenizer);
    let limit = backend.context_limit();
    if prompt_tokens + req.max_output_tokens > limit {
        return Err(GatewayError::Overflow {
            prompt_tokens,
            max_output_tokens: req.max_output_tokens,
            limit,
        });
    }
    let mut attempt = 0;
    loop {
        attempt += 1;
        match backend.complete(req) {
            Ok(resp) => {
                ledger.record(stage, resp.prompt_tokens, resp.completion_tokens);
                return Ok(resp);
            }
            Err(BackendError::Transport(message)) => {
                if attempt >= retry.max_attempts {
                    return Err(GatewayError::Transport {
                        attempts: attempt,
                        message,
                    });
                }
                tracing::warn!(attempt, %message, "transport error, retrying");
                let delay = retry.base_delay * 2u32.pow(attempt - 1);
                if !delay.is_zero() {
                    std::thread::sleep(delay);
                }
            }
            Err(BackendError::Other(message)) => return Err(GatewayError::Backend(message)),
        }
    }
}

/// A backend handle plus the accounting settings every stage shares.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn Backend>,
    pub tokenizer: Tokenizer,
    pub model_tag: String,
    pub retry: RetryPolicy,
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Gateway {
            backend,
            tokenizer: Tokenizer::Default,
            model_tag: "default".to_string(),
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_tokenizer(mut self, tokenizer: Tokenizer) -> Self {
        self.tokenizer = tokenizer;
        self
    }

    pub fn with_model_tag(mut self, tag: impl Into<String>) -> Self {
        self.model_tag = tag.into();
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn backend(&self) -> &dyn Backend {
        self.backend.as_ref()
    }

    pub fn context_limit(&self) -> usize {
        self.backend.context_limit()
    }

    pub fn count(&self, text: &str) -> usize {
        self.tokenizer.count(text)
    }

    pub fn request(&self, user: impl Into<String>, max_output_tokens: usize) -> ChatRequest {
        ChatRequest::new(self.model_tag.clone(), user, max_output_tokens)
    }

    /// True when `user` plus `max_output_tokens` fits the context window.
    pub fn fits(&self, user: &str, max_output_tokens: usize) -> bool {
        self.count(user) + max_output_tokens <= self.context_limit()
    }

    pub fn complete(
        &self,
        req: &ChatRequest,
        ledger: &mut UsageLedger,
        stage: &str,
    ) -> Result<ChatResponse, GatewayError> {
        complete(self.backend.as_ref(), req, ledger, stage, self.tokenizer, self.retry)
    }
}
