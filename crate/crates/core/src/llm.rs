//! Chat-completion gateway: the [`Completer`] trait, an OpenAI-compatible
//! HTTP backend and a scripted fixture-driven mock.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::http::{self, HttpError, RateLimiter, RetryPolicy};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LlmError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },
    #[error("authentication rejected (HTTP {status})")]
    Auth { status: u16 },
    #[error("rate limited (retry after {retry_after_secs:?}s)")]
    RateLimited { retry_after_secs: Option<u64> },
    #[error("request rejected (HTTP {status}): {body}")]
    BadRequest { status: u16, body: String },
    #[error("provider returned no completion content")]
    EmptyCompletion,
    #[error("malformed provider response: {0}")]
    Protocol(String),
    #[error("no scripted completion for prompt {hash}")]
    NoFixture { hash: String },
    #[error("completer configuration: {0}")]
    Config(String),
}

impl From<HttpError> for LlmError {
    fn from(e: HttpError) -> Self {
        match e {
            HttpError::Transport { message, attempts } => LlmError::Transport { message, attempts },
            HttpError::Auth { status } => LlmError::Auth { status },
            HttpError::RateLimited { retry_after_secs } => LlmError::RateLimited { retry_after_secs },
            HttpError::BadRequest { status, body } => LlmError::BadRequest { status, body },
            HttpError::Protocol(m) => LlmError::Protocol(m),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system: Option<String>,
    pub user: String,
    pub temperature: f32,
    pub max_tokens: u32,
    pub model: String,
}

impl ChatRequest {
    /// Deterministic request (temperature 0), as used for rewriting,
    /// selection and judging.
    pub fn new(user: impl Into<String>) -> Self {
        Self {
            system: None,
            user: user.into(),
            temperature: 0.0,
            max_tokens: 512,
            model: String::new(),
        }
    }

    pub fn with_system(mut self, system: impl Into<String>) -> Self {
        self.system = Some(system.into());
        self
    }

    pub fn with_temperature(mut self, temperature: f32) -> Self {
        self.temperature = temperature.clamp(0.0, 1.0);
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens.max(1);
        self
    }

    /// The full prompt text a fixture is keyed on.
    pub fn rendered_prompt(&self) -> String {
        match &self.system {
            Some(system) => format!("{system}\n\n{}", self.user),
            None => self.user.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub usage: Usage,
    pub latency_ms: u64,
    /// Transient failures retried before this response arrived.
    pub retries: u32,
}

pub trait Completer: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError>;
}

impl<T: Completer + ?Sized> Completer for std::sync::Arc<T> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).complete(request)
    }
}

/// Hex SHA-256 of the rendered prompt; fixture files use it as a key.
pub fn prompt_hash(request: &ChatRequest) -> String {
    hex::encode(Sha256::digest(request.rendered_prompt().as_bytes()))
}

fn is_hash_key(key: &str) -> bool {
    key.len() == 64 && key.bytes().all(|b| b.is_ascii_hexdigit())
}

/// Fixture-driven completer.
///
/// Lookup order: exact prompt hash, then substring patterns (longest first,
/// ties lexicographic), then the `"*"` default if present.
#[derive(Debug, Default)]
pub struct ScriptedCompleter {
    by_hash: HashMap<String, String>,
    patterns: Vec<(String, String)>,
    default: Option<String>,
    calls: AtomicUsize,
}

impl ScriptedCompleter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Build from a fixture map: 64-hex keys are prompt hashes, `"*"` is the
    /// default completion, anything else is a substring pattern.
    pub fn from_map(map: impl IntoIterator<Item = (String, String)>) -> Self {
        let mut mock = Self::new();
        for (key, text) in map {
            mock.insert(key, text);
        }
        mock
    }

    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
        let map: HashMap<String, String> = serde_json::from_str(&raw)
            .map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
        Ok(Self::from_map(map))
    }

    pub fn insert(&mut self, key: impl Into<String>, text: impl Into<String>) {
        let (key, text) = (key.into(), text.into());
        if key == "*" {
            self.default = Some(text);
        } else if is_hash_key(&key) {
            self.by_hash.insert(key.to_ascii_lowercase(), text);
        } else {
            self.patterns.retain(|(p, _)| *p != key);
            self.patterns.push((key, text));
            self.patterns
                .sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        }
    }

    pub fn with_prompt(mut self, request: &ChatRequest, text: impl Into<String>) -> Self {
        self.insert(prompt_hash(request), text);
        self
    }

    pub fn with_pattern(mut self, pattern: impl Into<String>, text: impl Into<String>) -> Self {
        self.insert(pattern, text);
        self
    }

    pub fn with_default(mut self, text: impl Into<String>) -> Self {
        self.default = Some(text.into());
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn lookup(&self, request: &ChatRequest) -> Result<&str, LlmError> {
        let hash = prompt_hash(request);
        if let Some(text) = self.by_hash.get(&hash) {
            return Ok(text);
        }
        let prompt = request.rendered_prompt();
        if let Some((_, text)) = self.patterns.iter().find(|(p, _)| prompt.contains(p.as_str())) {
            return Ok(text);
        }
        self.default.as_deref().ok_or(LlmError::NoFixture { hash })
    }
}

impl Completer for ScriptedCompleter {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let text = self.lookup(request)?.to_string();
        Ok(ChatResponse {
            usage: Usage {
                prompt_tokens: request.rendered_prompt().split_whitespace().count() as u32,
                completion_tokens: text.split_whitespace().count() as u32,
            },
            text,
            latency_ms: 0,
            retries: 0,
        })
    }
}

#[derive(Debug, Clone)]
pub struct HttpCompleterConfig {
    pub url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub retry: RetryPolicy,
    pub timeout: Duration,
    pub requests_per_second: Option<f64>,
}

impl HttpCompleterConfig {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            api_key: None,
            model: model.into(),
            retry: RetryPolicy::default(),
            timeout: Duration::from_secs(60),
            requests_per_second: None,
        }
    }

    /// Read `DMQR_LLM_URL`, `DMQR_LLM_KEY` and `DMQR_LLM_MODEL`.
    pub fn from_env() -> Result<Self, LlmError> {
        let url = std::env::var("DMQR_LLM_URL")
            .map_err(|_| LlmError::Config("DMQR_LLM_URL is not set".into()))?;
        let model = std::env::var("DMQR_LLM_MODEL").unwrap_or_else(|_| "gpt-4".into());
        let mut config = Self::new(url, model);
        config.api_key = std::env::var("DMQR_LLM_KEY").ok();
        Ok(config)
    }
}

/// OpenAI-compatible `chat/completions` client.
pub struct HttpCompleter {
    config: HttpCompleterConfig,
    client: reqwest::blocking::Client,
    limiter: Option<RateLimiter>,
}

#[derive(Deserialize)]
struct WireResponse {
    #[serde(default)]
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: Option<WireMessage>,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u32,
    #[serde(default)]
    completion_tokens: u32,
}

impl HttpCompleter {
    pub fn new(config: HttpCompleterConfig) -> Self {
        let limiter = config
            .requests_per_second
            .map(|rps| RateLimiter::new(rps, rps.ceil() as u32));
        Self {
            client: http::client(config.timeout),
            config,
            limiter,
        }
    }

    pub fn body(&self, request: &ChatRequest) -> serde_json::Value {
        let mut messages = Vec::new();
        if let Some(system) = &request.system {
            messages.push(json!({"role": "system", "content": system}));
        }
        messages.push(json!({"role": "user", "content": request.user}));
        let model = if request.model.is_empty() {
            &self.config.model
        } else {
            &request.model
        };
        json!({
            "model": model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        })
    }
}

impl Completer for HttpCompleter {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let body = self.body(request);
        let started = Instant::now();
        let delivered = http::send_with_retry(&self.config.retry, self.limiter.as_ref(), || {
            let mut builder = self.client.post(&self.config.url).json(&body);
            if let Some(key) = &self.config.api_key {
                builder = builder.bearer_auth(key);
            }
            builder
        })?;
        let wire: WireResponse = serde_json::from_str(&delivered.body)
            .map_err(|e| LlmError::Protocol(e.to_string()))?;
        let text = wire
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message)
            .and_then(|m| m.content)
            .ok_or(LlmError::EmptyCompletion)?;
        let usage = wire
            .usage
            .map(|u| Usage {
                prompt_tokens: u.prompt_tokens,
                completion_tokens: u.completion_tokens,
            })
            .unwrap_or_default();
        Ok(ChatResponse {
            text,
            usage,
            latency_ms: started.elapsed().as_millis() as u64,
            retries: delivered.retries,
        })
    }
}
