//! OpenAI-compatible HTTP completion client with bounded retry and a
//! concurrent-request limit.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::prompt::{AssembledPrompt, ChatRole};

use super::{Backend, BackendError, GenerationParams};

/// Which wire shape to speak: chat sends the turn list to
/// `/chat/completions`, plain sends the flattened text to `/completions`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApiStyle {
    Chat,
    Plain,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EndpointConfig {
    /// Base URL up to the API root, e.g. "https://api.example.com/v1".
    pub base_url: String,
    pub api_style: ApiStyle,
    /// Never read from repo files; callers take it from the environment.
    #[serde(skip)]
    pub api_key: String,
    /// Retries after the first attempt for retryable failures.
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    /// Maximum in-flight requests through this backend.
    pub max_concurrent: usize,
    pub request_timeout_secs: u64,
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, api_style: ApiStyle, api_key: impl Into<String>) -> Self {
        EndpointConfig {
            base_url: base_url.into(),
            api_style,
            api_key: api_key.into(),
            max_retries: 3,
            initial_backoff_ms: 250,
            max_concurrent: 4,
            request_timeout_secs: 120,
        }
    }
}

// A counting semaphore; std has no async-free one and the dependency is
// not worth it for two methods.
struct Semaphore {
    permits: Mutex<usize>,
    returned: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Semaphore { permits: Mutex::new(permits.max(1)), returned: Condvar::new() }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.returned.wait(permits).unwrap();
        }
        *permits -= 1;
        SemaphoreGuard { sem: self }
    }
}

struct SemaphoreGuard<'a> {
    sem: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.sem.permits.lock().unwrap() += 1;
        self.sem.returned.notify_one();
    }
}

/// Blocking HTTP backend. Transient failures (429, 5xx, transport) retry
/// with exponential backoff up to the configured budget; auth failures,
/// client errors, and malformed responses fail immediately.
pub struct HttpBackend {
    config: EndpointConfig,
    client: reqwest::blocking::Client,
    limiter: Semaphore,
}

impl HttpBackend {
    pub fn new(config: EndpointConfig) -> Result<Self, BackendError> {
        if config.base_url.trim().is_empty() {
            return Err(BackendError::Config("endpoint base_url is empty".to_string()));
        }
        if config.api_key.trim().is_empty() {
            return Err(BackendError::Config(
                "api key is empty; set it in the environment".to_string(),
            ));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.request_timeout_secs.max(1)))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        let limiter = Semaphore::new(config.max_concurrent);
        Ok(HttpBackend { config, client, limiter })
    }

    fn request_url(&self) -> String {
        let base = self.config.base_url.trim_end_matches('/');
        match self.config.api_style {
            ApiStyle::Chat => format!("{base}/chat/completions"),
            ApiStyle::Plain => format!("{base}/completions"),
        }
    }

    fn request_body(&self, prompt: &AssembledPrompt, params: &GenerationParams) -> serde_json::Value {
        let mut body = serde_json::json!({
            "model": params.model_id,
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
            "n": params.n_samples,
            "presence_penalty": params.presence_penalty,
            "frequency_penalty": params.frequency_penalty,
        });
        match self.config.api_style {
            ApiStyle::Chat => {
                let messages: Vec<serde_json::Value> = prompt
                    .chat_turns
                    .iter()
                    .map(|t| {
                        let role = match t.role {
                            ChatRole::System => "system",
                            ChatRole::User => "user",
                            ChatRole::Assistant => "assistant",
                        };
                        serde_json::json!({ "role": role, "content": t.text })
                    })
                    .collect();
                body["messages"] = serde_json::Value::Array(messages);
            }
            ApiStyle::Plain => {
                body["prompt"] = serde_json::Value::String(prompt.plain_text.clone());
            }
        }
        body
    }

    /// One send. `Ok` is the response body on HTTP success; `Err` carries a
    /// typed failure the retry loop classifies.
    fn attempt(&self, url: &str, body: &serde_json::Value) -> Result<String, BackendError> {
        let _permit = self.limiter.acquire();
        let response = self
            .client
            .post(url)
            .bearer_auth(&self.config.api_key)
            .json(body)
            .send()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response.text().map_err(|e| BackendError::Transport(e.to_string()))?;
        match status {
            200..=299 => Ok(text),
            401 | 403 => Err(BackendError::Auth(truncate(&text))),
            429 => Err(BackendError::RateLimited { attempts: 0 }),
            _ => Err(BackendError::Http { status, message: truncate(&text) }),
        }
    }

    fn extract_texts(&self, body: &str, n_samples: u32) -> Result<Vec<String>, BackendError> {
        let json: serde_json::Value = serde_json::from_str(body)
            .map_err(|e| BackendError::MalformedResponse(format!("invalid json: {e}")))?;
        let choices = json["choices"]
            .as_array()
            .ok_or_else(|| BackendError::MalformedResponse("missing choices array".to_string()))?;
        let mut texts = Vec::with_capacity(choices.len());
        for choice in choices {
            let text = match self.config.api_style {
                ApiStyle::Chat => choice["message"]["content"].as_str(),
                ApiStyle::Plain => choice["text"].as_str(),
            };
            match text {
                Some(t) => texts.push(t.to_string()),
                None => {
                    return Err(BackendError::MalformedResponse(
                        "choice missing completion text".to_string(),
                    ))
                }
            }
        }
        if texts.len() != n_samples as usize {
            return Err(BackendError::MalformedResponse(format!(
                "expected {n_samples} completions, got {}",
                texts.len()
            )));
        }
        Ok(texts)
    }
}

fn truncate(s: &str) -> String {
    const LIMIT: usize = 400;
    if s.len() <= LIMIT {
        return s.to_string();
    }
    let mut end = LIMIT;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}...", &s[..end])
}

impl Backend for HttpBackend {
    fn complete(
        &self,
        prompt: &AssembledPrompt,
        params: &GenerationParams,
    ) -> Result<Vec<String>, BackendError> {
        params.validate()?;
        let url = self.request_url();
        let body = self.request_body(prompt, params);

        let mut rate_limited_attempts = 0u32;
        let mut attempt_index = 0u32;
        loop {
            match self.attempt(&url, &body) {
                Ok(response_body) => return self.extract_texts(&response_body, params.n_samples),
                Err(err) => {
                    let retryable = match &err {
                        BackendError::RateLimited { .. } => {
                            rate_limited_attempts += 1;
                            true
                        }
                        other => other.is_retryable(),
                    };
                    if !retryable || attempt_index >= self.config.max_retries {
                        if matches!(err, BackendError::RateLimited { .. }) {
                            return Err(BackendError::RateLimited {
                                attempts: rate_limited_attempts,
                            });
                        }
                        return Err(err);
                    }
                    let backoff = self.config.initial_backoff_ms.saturating_mul(1 << attempt_index);
                    std::thread::sleep(Duration::from_millis(backoff));
                    attempt_index += 1;
                }
            }
        }
    }

    fn name(&self) -> String {
        format!("http:{}", self.config.base_url)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn url_selection_by_style() {
        let mut config = EndpointConfig::new("http://localhost:1/v1/", ApiStyle::Chat, "k");
        let backend = HttpBackend::new(config.clone()).unwrap();
        assert_eq!(backend.request_url(), "http://localhost:1/v1/chat/completions");
        config.api_style = ApiStyle::Plain;
        let backend = HttpBackend::new(config).unwrap();
        assert_eq!(backend.request_url(), "http://localhost:1/v1/completions");
    }

    #[test]
    fn config_rejects_missing_key_or_url() {
        assert!(HttpBackend::new(EndpointConfig::new("", ApiStyle::Chat, "k")).is_err());
        assert!(HttpBackend::new(EndpointConfig::new("http://x", ApiStyle::Chat, "")).is_err());
    }

    #[test]
    fn semaphore_bounds_concurrency() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        use std::sync::Arc;
        let sem = Arc::new(Semaphore::new(2));
        let active = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let mut handles = Vec::new();
        for _ in 0..8 {
            let sem = sem.clone();
            let active = active.clone();
            let peak = peak.clone();
            handles.push(std::thread::spawn(move || {
                let _permit = sem.acquire();
                let now = active.fetch_add(1, Ordering::SeqCst) + 1;
                peak.fetch_max(now, Ordering::SeqCst);
                std::thread::sleep(Duration::from_millis(10));
                active.fetch_sub(1, Ordering::SeqCst);
            }));
        }
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }

    #[test]
    fn extract_texts_enforces_sample_count() {
        let config = EndpointConfig::new("http://x/v1", ApiStyle::Plain, "k");
        let backend = HttpBackend::new(config).unwrap();
        let body = r#"{"choices":[{"text":"a"},{"text":"b"}]}"#;
        assert_eq!(backend.extract_texts(body, 2).unwrap(), vec!["a", "b"]);
        assert!(backend.extract_texts(body, 3).is_err());
        assert!(backend.extract_texts("{}", 1).is_err());
        assert!(backend.extract_texts("not json", 1).is_err());
    }
}
