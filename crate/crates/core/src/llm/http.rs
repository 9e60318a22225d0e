//! Chat-completions style HTTP backend.
//!
//! Request body:
//! `{"model", "messages": [{"role": "user", "content"}], "n", "temperature",
//! "max_tokens", "stop", "seed"}`. The response carries `choices`, each with
//! an `index` and either `message.content` or `text`.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};
use tracing::{debug, warn};

use super::{Backend, ModelRole, PromptRequest};
use crate::error::{Error, Result};
use crate::model::content_id;

pub const DEFAULT_TOKEN_ENV: &str = "SPECFORGE_API_TOKEN";

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub url: String,
    pub model_generalist: String,
    pub model_coder: String,
    /// Environment variable holding the bearer token. Unset means no
    /// `Authorization` header is sent.
    pub token_env: String,
    pub max_concurrency: usize,
    pub attempts: u32,
    /// First backoff delay; doubled after every failed attempt.
    pub backoff: Duration,
    pub timeout: Duration,
}

impl HttpConfig {
    pub fn new(url: impl Into<String>, model_generalist: impl Into<String>, model_coder: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            model_generalist: model_generalist.into(),
            model_coder: model_coder.into(),
            token_env: DEFAULT_TOKEN_ENV.to_string(),
            max_concurrency: 4,
            attempts: 3,
            backoff: Duration::from_secs(1),
            timeout: Duration::from_secs(120),
        }
    }
}

/// Counting semaphore bounding in-flight requests.
struct Slots {
    free: Mutex<usize>,
    ready: Condvar,
}

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.ready.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.ready.notify_one();
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    agent: ureq::Agent,
    slots: Slots,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self> {
        if config.url.trim().is_empty() {
            return Err(Error::Config("backend.url is empty".into()));
        }
        if config.attempts == 0 || config.max_concurrency == 0 {
            return Err(Error::Config("attempts and max_concurrency must be positive".into()));
        }
        let agent = ureq::AgentBuilder::new().timeout(config.timeout).build();
        let slots = Slots {
            free: Mutex::new(config.max_concurrency),
            ready: Condvar::new(),
        };
        Ok(Self { config, agent, slots })
    }

    fn model(&self, role: ModelRole) -> &str {
        match role {
            ModelRole::Generalist => &self.config.model_generalist,
            ModelRole::Coder => &self.config.model_coder,
        }
    }

    /// JSON body for `n` samples of `request`.
    pub fn request_body(&self, request: &PromptRequest, n: u32, seed: u64) -> Value {
        json!({
            "model": self.model(request.role),
            "messages": [{"role": "user", "content": request.prompt_text}],
            "n": n,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "stop": request.stop_sequences,
            "seed": seed,
        })
    }

    fn post_with_retries(&self, body: &Value, request_id: &str) -> Result<Vec<String>> {
        let token = std::env::var(&self.config.token_env).ok().filter(|t| !t.is_empty());
        let mut delay = self.config.backoff;
        let mut last = String::new();
        for attempt in 1..=self.config.attempts {
            let mut call = self
                .agent
                .post(&self.config.url)
                .set("Content-Type", "application/json")
                .set("X-Request-Id", request_id);
            if let Some(token) = &token {
                call = call.set("Authorization", &format!("Bearer {token}"));
            }
            match call.send_json(body.clone()) {
                Ok(response) => {
                    let value: Value = response
                        .into_json()
                        .map_err(|e| Error::Backend(format!("unreadable response: {e}")))?;
                    return parse_choices(&value);
                }
                Err(ureq::Error::Status(429, response)) => {
                    let text = response.into_string().unwrap_or_default();
                    return Err(Error::Quota(format!("HTTP 429 for request {request_id}: {}", text.trim())));
                }
                Err(ureq::Error::Status(code, response)) if code >= 500 => {
                    last = format!("HTTP {code}: {}", response.into_string().unwrap_or_default().trim());
                }
                Err(ureq::Error::Status(code, response)) => {
                    let text = response.into_string().unwrap_or_default();
                    return Err(Error::Backend(format!("HTTP {code}: {}", text.trim())));
                }
                Err(ureq::Error::Transport(t)) => last = t.to_string(),
            }
            warn!(attempt, request_id, error = %last, "backend request failed");
            if attempt < self.config.attempts {
                thread::sleep(delay);
                delay *= 2;
            }
        }
        Err(Error::Backend(format!(
            "{} attempts failed for request {request_id}: {last}",
            self.config.attempts
        )))
    }
}

/// Completion texts ordered by choice index.
pub fn parse_choices(value: &Value) -> Result<Vec<String>> {
    let choices = value
        .get("choices")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Backend("response has no choices array".into()))?;
    let mut indexed = Vec::with_capacity(choices.len());
    for (pos, choice) in choices.iter().enumerate() {
        let index = choice.get("index").and_then(Value::as_u64).unwrap_or(pos as u64);
        let text = choice
            .pointer("/message/content")
            .or_else(|| choice.get("text"))
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Backend(format!("choice {index} has no text")))?;
        indexed.push((index, text.to_string()));
    }
    indexed.sort_by_key(|(i, _)| *i);
    Ok(indexed.into_iter().map(|(_, t)| t).collect())
}

impl Backend for HttpBackend {
    fn name(&self) -> &str {
        "http"
    }

    fn generate(&self, request: &PromptRequest) -> Result<Vec<String>> {
        let _slot = self.slots.acquire();
        let wanted = request.n_samples as usize;
        let mut out: Vec<String> = Vec::with_capacity(wanted);
        // A short answer is topped up with follow-up requests; each must make
        // progress or the call fails.
        while out.len() < wanted {
            let remaining = (wanted - out.len()) as u32;
            let seed = request.seed.wrapping_add(out.len() as u64);
            let body = self.request_body(request, remaining, seed);
            let request_id = content_id("req", &[&body.to_string()]);
            debug!(request_id, remaining, "backend request");
            let got = self.post_with_retries(&body, &request_id)?;
            if got.is_empty() {
                return Err(Error::Backend(format!("request {request_id} returned no choices")));
            }
            out.extend(got.into_iter().take(remaining as usize));
        }
        Ok(out)
    }
}
