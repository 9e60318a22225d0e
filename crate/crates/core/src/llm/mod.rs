//! Text-generation backends and the completion contract shared by every
//! prompting stage.

mod http;
mod mock;

pub use http::{parse_choices, HttpBackend, HttpConfig, DEFAULT_TOKEN_ENV};
pub use mock::MockBackend;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which of the two models a request is meant for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelRole {
    /// General-purpose model that writes intents and I/O summaries.
    Generalist,
    /// Code model that samples solutions.
    Coder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub role: ModelRole,
    pub prompt_text: String,
    pub n_samples: u32,
    pub temperature: f64,
    pub max_tokens: u32,
    pub stop_sequences: Vec<String>,
    pub seed: u64,
}

impl PromptRequest {
    pub fn new(role: ModelRole, prompt_text: impl Into<String>) -> Self {
        Self {
            role,
            prompt_text: prompt_text.into(),
            n_samples: 1,
            temperature: 0.8,
            max_tokens: 1024,
            stop_sequences: Vec::new(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Invalid("n_samples must be at least 1".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(Error::Invalid(format!("temperature {} is negative", self.temperature)));
        }
        if self.max_tokens == 0 {
            return Err(Error::Invalid("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

pub trait Backend: Send + Sync {
    fn name(&self) -> &str;

    /// Raw samples for `request`. Implementations may return completions
    /// that run past a stop sequence; [`complete`] trims them.
    fn generate(&self, request: &PromptRequest) -> Result<Vec<String>>;
}

/// Cuts `text` at the earliest occurrence of any stop sequence.
pub fn truncate_at_stop(text: &str, stops: &[String]) -> String {
    let cut = stops
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()))
        .min()
        .unwrap_or(text.len());
    text[..cut].to_string()
}

/// Exactly `n_samples` completions, each cut at its first stop sequence.
pub fn complete(request: &PromptRequest, backend: &dyn Backend) -> Result<Vec<String>> {
    request.validate()?;
    let raw = backend.generate(request)?;
    if raw.len() != request.n_samples as usize {
        return Err(Error::Backend(format!(
            "{} returned {} samples, expected {}",
            backend.name(),
            raw.len(),
            request.n_samples
        )));
    }
    Ok(raw
        .iter()
        .map(|t| truncate_at_stop(t, &request.stop_sequences))
        .collect())
}
