//! Endpoint and sampling configuration.

use serde::{Deserialize, Serialize};

/// A chat-completions endpoint the harness can talk to.
///
/// `credential_ref` names an environment variable holding the API key; the
/// key itself never appears in config files or logs. An empty `credential_ref`
/// means the endpoint needs no authentication (e.g. a local stub).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelEndpoint {
    /// Short label used in reports and cache keys.
    pub name: String,
    pub base_url: String,
    /// Model identifier sent in the request body.
    pub model_id: String,
    #[serde(default)]
    pub credential_ref: String,
    #[serde(default = "default_max_parallel")]
    pub max_parallel: usize,
    /// Optional client-side rate cap; `None` means uncapped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requests_per_minute: Option<u32>,
}

fn default_max_parallel() -> usize {
    4
}

impl ModelEndpoint {
    pub fn new(
        name: impl Into<String>,
        base_url: impl Into<String>,
        model_id: impl Into<String>,
    ) -> Self {
        ModelEndpoint {
            name: name.into(),
            base_url: base_url.into(),
            model_id: model_id.into(),
            credential_ref: String::new(),
            max_parallel: default_max_parallel(),
            requests_per_minute: None,
        }
    }

    /// Resolves the API key from the environment variable named by
    /// `credential_ref`. `Ok(None)` when no credential is required.
    pub fn resolve_credential(&self) -> Result<Option<String>, ConfigError> {
        if self.credential_ref.is_empty() {
            return Ok(None);
        }
        match std::env::var(&self.credential_ref) {
            Ok(value) if !value.is_empty() => Ok(Some(value)),
            _ => Err(ConfigError::MissingCredential {
                var: self.credential_ref.clone(),
            }),
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut violations = Vec::new();
        if self.name.is_empty() {
            violations.push("endpoint name is empty".to_string());
        }
        if self.base_url.is_empty() {
            violations.push("endpoint base_url is empty".to_string());
        }
        if self.model_id.is_empty() {
            violations.push("endpoint model_id is empty".to_string());
        }
        if self.max_parallel == 0 {
            violations.push("max_parallel must be at least 1".to_string());
        }
        if self.requests_per_minute == Some(0) {
            violations.push("requests_per_minute must be at least 1 when set".to_string());
        }
        violations
    }
}

/// Sampling controls for a batch of completions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    /// How many independent samples to draw per prompt.
    pub samples_per_prompt: u32,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            temperature: 1.0,
            top_p: 1.0,
            max_tokens: 512,
            samples_per_prompt: 10,
        }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Vec<String> {
        let mut violations = Vec::new();
        if !(self.temperature >= 0.0) {
            violations.push("temperature must be >= 0".to_string());
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            violations.push("top_p must be in (0, 1]".to_string());
        }
        if self.max_tokens == 0 {
            violations.push("max_tokens must be at least 1".to_string());
        }
        if self.samples_per_prompt == 0 {
            violations.push("samples_per_prompt must be at least 1".to_string());
        }
        violations
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("credential environment variable {var:?} is unset or empty")]
    MissingCredential { var: String },
    #[error("invalid configuration: {}", violations.join("; "))]
    Invalid { violations: Vec<String> },
}
