//! Text-completion backends: a chat-completions HTTP client and a seeded
//! ground-truth oracle used to validate the harness without a model.

mod http;
mod oracle;

pub use http::{BackendConfig, HttpBackend};
pub use oracle::{OracleBackend, OracleConfig, WrongAnswerPolicy};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::PromptCase;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenUsage {
    #[serde(default)]
    pub prompt_tokens: u64,
    #[serde(default)]
    pub completion_tokens: u64,
    #[serde(default)]
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResult {
    /// Raw completion text, unmodified.
    pub text: String,
    pub latency_ms: u64,
    pub attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<TokenUsage>,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    /// Connection failures or retryable statuses (429, 5xx) after the last retry.
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint returned non-retryable status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed completion response: {0}")]
    Malformed(String),
    #[error("invalid backend configuration: {0}")]
    Config(String),
}

impl BackendError {
    /// Retry exhaustion is scored as an incorrect answer; every other error
    /// aborts a run.
    pub fn is_retry_exhausted(&self) -> bool {
        matches!(self, BackendError::Transport { .. })
    }
}

/// A completion source shared by concurrent evaluation workers.
pub trait CompletionBackend: Send + Sync {
    fn complete(&self, case: &PromptCase) -> Result<CompletionResult, BackendError>;
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for &B {
    fn complete(&self, case: &PromptCase) -> Result<CompletionResult, BackendError> {
        (**self).complete(case)
    }
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for Box<B> {
    fn complete(&self, case: &PromptCase) -> Result<CompletionResult, BackendError> {
        (**self).complete(case)
    }
}
