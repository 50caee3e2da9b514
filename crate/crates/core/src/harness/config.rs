//! Harness configuration: one TOML document, overridden by CLI flags.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, GenerationBackend, MockBackend};
use crate::harness::remote::{RemoteChatBackend, RemoteConfig, RetryPolicy, DEFAULT_API_KEY_ENV};
use crate::trajectory::{GenerationParams, Instrument};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Remote,
}

impl std::str::FromStr for BackendKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mock" => Ok(BackendKind::Mock),
            "remote" => Ok(BackendKind::Remote),
            other => Err(format!("unknown backend `{other}` (expected mock or remote)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub backend: BackendKind,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    /// Name of the environment variable holding the API key. Never the key.
    pub api_key_env: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub instrument: Instrument,
    pub run_dir: PathBuf,
    pub session_seed: Option<u64>,
    pub timeout_secs: f64,
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub parallelism: usize,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        let g = GenerationParams::default();
        HarnessConfig {
            backend: BackendKind::Mock,
            endpoint: None,
            model: None,
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
            temperature: g.temperature,
            max_tokens: g.max_tokens,
            instrument: Instrument::Both,
            run_dir: PathBuf::from("runs"),
            session_seed: None,
            timeout_secs: 120.0,
            max_attempts: 3,
            base_delay_ms: 500,
            parallelism: 4,
        }
    }
}

impl HarnessConfig {
    pub fn from_toml(doc: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(doc)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let doc = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Self::from_toml(&doc)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        match self.backend {
            BackendKind::Remote => {
                if self.endpoint.as_deref().unwrap_or("").is_empty() {
                    return invalid("remote backend requires `endpoint`");
                }
                if self.model.as_deref().unwrap_or("").is_empty() {
                    return invalid("remote backend requires `model`");
                }
            }
            BackendKind::Mock => {
                if self.session_seed.is_none() {
                    return invalid("mock backend requires `session_seed` (or --seed)");
                }
            }
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return invalid("temperature must be >= 0");
        }
        if self.max_tokens == 0 {
            return invalid("max_tokens must be positive");
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return invalid("timeout_secs must be positive");
        }
        if self.max_attempts == 0 {
            return invalid("max_attempts must be at least 1");
        }
        if self.parallelism == 0 {
            return invalid("parallelism must be at least 1");
        }
        Ok(())
    }

    pub fn generation_params(&self) -> GenerationParams {
        GenerationParams { temperature: self.temperature, max_tokens: self.max_tokens, seed: None }
    }

    pub fn remote_config(&self) -> RemoteConfig {
        RemoteConfig {
            endpoint: self.endpoint.clone().unwrap_or_default(),
            model: self.model.clone().unwrap_or_default(),
            api_key_env: (!self.api_key_env.is_empty()).then(|| self.api_key_env.clone()),
            timeout: Duration::from_secs_f64(self.timeout_secs),
            retry: RetryPolicy {
                max_attempts: self.max_attempts,
                base_delay: Duration::from_millis(self.base_delay_ms),
                ..RetryPolicy::default()
            },
        }
    }

    pub fn build_backend(&self) -> Result<Box<dyn GenerationBackend>, ConfigError> {
        self.validate()?;
        Ok(match self.backend {
            BackendKind::Mock => Box::new(MockBackend::new(self.session_seed.unwrap_or_default())),
            BackendKind::Remote => Box::new(RemoteChatBackend::new(self.remote_config())?),
        })
    }
}
