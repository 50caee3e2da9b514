//! Chat-completion HTTP backend.
//!
//! Speaks the common `POST {model, messages, temperature, max_tokens, seed}`
//! shape and reads `choices[0].message.content` from the reply. Transport
//! errors, timeouts, 5xx and 429 are retried with exponential backoff; other
//! 4xx responses fail immediately.

use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

use crate::backend::{BackendError, GenerationBackend};
use crate::trajectory::PromptBundle;

pub const DEFAULT_API_KEY_ENV: &str = "WELLA_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Total attempts including the first.
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt + 1`, doubling from `base_delay`.
    pub fn delay_after(&self, attempt: u32) -> Duration {
        let factor = 2u32.saturating_pow(attempt.saturating_sub(1));
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token; `None` sends no
    /// Authorization header (local servers).
    pub api_key_env: Option<String>,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

impl RemoteConfig {
    pub fn new(endpoint: &str, model: &str) -> Self {
        RemoteConfig {
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            api_key_env: Some(DEFAULT_API_KEY_ENV.to_string()),
            timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Debug)]
pub struct RemoteChatBackend {
    config: RemoteConfig,
    client: Client,
}

enum Attempt {
    Done(String),
    Retry(BackendError),
    Fail(BackendError),
}

impl RemoteChatBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, BackendError> {
        if config.timeout.is_zero() {
            return Err(BackendError::Unavailable("timeout must be positive".into()));
        }
        if config.retry.max_attempts == 0 {
            return Err(BackendError::Unavailable("max_attempts must be at least 1".into()));
        }
        if config.endpoint.is_empty() || config.model.is_empty() {
            return Err(BackendError::Unavailable("endpoint and model are required".into()));
        }
        let client = Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Unavailable(format!("building HTTP client: {e}")))?;
        Ok(RemoteChatBackend { config, client })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    /// The exact JSON body sent for a bundle.
    pub fn request_body(&self, bundle: &PromptBundle) -> Value {
        let p = &bundle.generation_params;
        let mut body = json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": bundle.system_text},
                {"role": "user", "content": bundle.user_text},
            ],
            "temperature": p.temperature,
            "max_tokens": p.max_tokens,
        });
        if let Some(seed) = p.seed {
            body["seed"] = json!(seed);
        }
        body
    }

    fn api_key(&self) -> Result<Option<String>, BackendError> {
        match &self.config.api_key_env {
            None => Ok(None),
            Some(var) => std::env::var(var).map(Some).map_err(|_| {
                BackendError::Unavailable(format!("API key environment variable `{var}` is not set"))
            }),
        }
    }

    fn attempt(&self, body: &Value, key: Option<&str>, attempt: u32) -> Attempt {
        let mut req = self.client.post(&self.config.endpoint).json(body);
        if let Some(k) = key {
            req = req.bearer_auth(k);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) => {
                let what = if e.is_timeout() { "timed out" } else { "transport error" };
                return Attempt::Retry(BackendError::Unavailable(format!(
                    "{what} on attempt {attempt}: {}",
                    e.without_url()
                )));
            }
        };
        let status = resp.status();
        match status {
            StatusCode::UNAUTHORIZED | StatusCode::FORBIDDEN => {
                Attempt::Fail(BackendError::Auth { status: status.as_u16() })
            }
            StatusCode::TOO_MANY_REQUESTS => Attempt::Retry(BackendError::Quota { attempts: attempt }),
            s if s.is_server_error() => Attempt::Retry(BackendError::Unavailable(format!(
                "HTTP {} on attempt {attempt}",
                s.as_u16()
            ))),
            s if !s.is_success() => {
                let message = resp.text().unwrap_or_default().chars().take(500).collect();
                Attempt::Fail(BackendError::Rejected { status: s.as_u16(), message })
            }
            _ => {
                let body: Value = match resp.json() {
                    Ok(v) => v,
                    Err(e) => {
                        return Attempt::Retry(BackendError::Unavailable(format!(
                            "unreadable completion body: {}",
                            e.without_url()
                        )))
                    }
                };
                match body.pointer("/choices/0/message/content").and_then(Value::as_str) {
                    Some(text) if !text.trim().is_empty() => Attempt::Done(text.to_string()),
                    Some(_) => Attempt::Fail(BackendError::EmptyCompletion),
                    None => Attempt::Fail(BackendError::Unavailable(
                        "completion body has no choices[0].message.content".into(),
                    )),
                }
            }
        }
    }

    /// Sends the request, retrying transient failures. Returns the assistant
    /// text and the number of attempts used.
    pub fn generate_with_attempts(&self, bundle: &PromptBundle) -> Result<(String, u32), BackendError> {
        let key = self.api_key()?;
        let body = self.request_body(bundle);
        let max = self.config.retry.max_attempts;
        let mut attempt = 1;
        loop {
            match self.attempt(&body, key.as_deref(), attempt) {
                Attempt::Done(text) => return Ok((text, attempt)),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(e) if attempt >= max => {
                    return Err(match e {
                        BackendError::Quota { .. } => BackendError::Quota { attempts: attempt },
                        BackendError::Unavailable(msg) => {
                            BackendError::Unavailable(format!("{msg} (gave up after {attempt} attempts)"))
                        }
                        other => other,
                    })
                }
                Attempt::Retry(e) => {
                    let delay = self.config.retry.delay_after(attempt);
                    log::warn!("{}: {}; retrying in {:?}", self.id(), e, delay);
                    std::thread::sleep(delay);
                    attempt += 1;
                }
            }
        }
    }
}

impl GenerationBackend for RemoteChatBackend {
    fn id(&self) -> String {
        format!("remote:{}", self.config.model)
    }

    fn generate(&self, bundle: &PromptBundle) -> Result<String, BackendError> {
        self.generate_with_attempts(bundle).map(|(text, _)| text)
    }
}
