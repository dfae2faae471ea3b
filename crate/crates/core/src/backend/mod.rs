//! Completion backends: a remote OpenAI-compatible HTTP client and a
//! deterministic offline mock, behind one trait.

pub mod http;
pub mod mock;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::prompt::AssembledPrompt;

pub use http::{ApiStyle, EndpointConfig, HttpBackend};
pub use mock::MockBackend;

/// Failure modes of a completion backend, split into retryable transient
/// conditions and fatal ones the caller must not retry.
#[derive(Debug)]
pub enum BackendError {
    /// Invalid or missing credential. Fatal.
    Auth(String),
    /// Rate limit persisted past the retry budget.
    RateLimited { attempts: u32 },
    /// Non-auth HTTP error status. Retryable only for 5xx.
    Http { status: u16, message: String },
    /// Network-level failure (connect, timeout, TLS).
    Transport(String),
    /// Response parsed but did not carry the expected completion payload.
    MalformedResponse(String),
    /// Backend configuration problem (bad URL, missing fields). Fatal.
    Config(String),
}

impl BackendError {
    /// Whether a fresh attempt could plausibly succeed.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Auth(_) | BackendError::Config(_) | BackendError::MalformedResponse(_) => false,
            BackendError::RateLimited { .. } => false,
            BackendError::Http { status, .. } => *status >= 500,
            BackendError::Transport(_) => true,
        }
    }
}

impl fmt::Display for BackendError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendError::Auth(msg) => write!(f, "authentication failed: {msg}"),
            BackendError::RateLimited { attempts } => {
                write!(f, "rate limited; gave up after {attempts} attempts")
            }
            BackendError::Http { status, message } => write!(f, "http {status}: {message}"),
            BackendError::Transport(msg) => write!(f, "transport error: {msg}"),
            BackendError::MalformedResponse(msg) => write!(f, "malformed response: {msg}"),
            BackendError::Config(msg) => write!(f, "backend config error: {msg}"),
        }
    }
}

impl std::error::Error for BackendError {}

// ── Sampling parameters ───────────────────────────────────────────────

/// Sampling parameters for one completion call. Defaults: temperature 0.7,
/// no penalties; output budgets of 256 tokens for 2D captions, 512 for
/// bedrooms (~5 objects), 1024 for living rooms (~11 objects); five samples
/// per 2D prompt, one per 3D floor plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub n_samples: u32,
    pub presence_penalty: f64,
    pub frequency_penalty: f64,
    /// Consumed by deterministic backends; remote APIs ignore it.
    pub seed: u64,
}

impl GenerationParams {
    fn base(model_id: impl Into<String>, max_tokens: u32, n_samples: u32) -> Self {
        GenerationParams {
            model_id: model_id.into(),
            temperature: 0.7,
            max_tokens,
            n_samples,
            presence_penalty: 0.0,
            frequency_penalty: 0.0,
            seed: 0,
        }
    }

    pub fn for_2d(model_id: impl Into<String>) -> Self {
        Self::base(model_id, 256, 5)
    }

    pub fn for_bedroom(model_id: impl Into<String>) -> Self {
        Self::base(model_id, 512, 1)
    }

    pub fn for_living_room(model_id: impl Into<String>) -> Self {
        Self::base(model_id, 1024, 1)
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.temperature < 0.0 {
            return Err(BackendError::Config("temperature must be nonnegative".to_string()));
        }
        if self.max_tokens == 0 || self.n_samples == 0 {
            return Err(BackendError::Config(
                "max_tokens and n_samples must be positive".to_string(),
            ));
        }
        Ok(())
    }
}

// ── Interface ─────────────────────────────────────────────────────────

/// A completion provider. Implementations return exactly `n_samples` texts
/// or an error; partial success is never silent. They must be safe for
/// concurrent calls.
pub trait Backend: Send + Sync {
    fn complete(
        &self,
        prompt: &AssembledPrompt,
        params: &GenerationParams,
    ) -> Result<Vec<String>, BackendError>;

    /// Identity string recorded in run manifests.
    fn name(&self) -> String;
}
