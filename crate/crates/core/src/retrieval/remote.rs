use std::time::Duration;

use serde_json::Value;

use super::{RetrievalError, Retriever};
use crate::http::{self, RateLimiter, RetryPolicy};
use crate::model::{Document, RankedList};

#[derive(Debug, Clone)]
pub struct RemoteSearchConfig {
    pub url: String,
    pub api_key: Option<String>,
    /// Header carrying the key; `None` sends `Authorization: Bearer`.
    pub key_header: Option<String>,
    pub retry: RetryPolicy,
    pub timeout: Duration,
    pub requests_per_second: Option<f64>,
}

impl RemoteSearchConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            api_key: None,
            key_header: None,
            retry: RetryPolicy::default(),
            timeout: Duration::from_secs(10),
            requests_per_second: None,
        }
    }

    /// `DMQR_SEARCH_URL` and `DMQR_SEARCH_KEY`.
    pub fn from_env() -> Option<Self> {
        let url = std::env::var("DMQR_SEARCH_URL").ok()?;
        let mut config = Self::new(url);
        config.api_key = std::env::var("DMQR_SEARCH_KEY").ok();
        Some(config)
    }
}

/// Web search over HTTP GET `url?q=<query>&count=<limit>`.
///
/// Accepts a bare JSON array of results, or an object holding one under
/// `results`, `items`, `value` or `webPages.value`. Each result maps
/// `name`/`title`, `url`/`link` and `snippet`/`content`/`description`.
pub struct RemoteSearch {
    config: RemoteSearchConfig,
    client: reqwest::blocking::Client,
    limiter: Option<RateLimiter>,
}

impl RemoteSearch {
    pub fn new(config: RemoteSearchConfig) -> Self {
        let limiter = config
            .requests_per_second
            .map(|rps| RateLimiter::new(rps, rps.ceil() as u32));
        Self {
            client: http::client(config.timeout),
            config,
            limiter,
        }
    }
}

fn result_array(body: &Value) -> Option<&Vec<Value>> {
    if let Some(arr) = body.as_array() {
        return Some(arr);
    }
    ["results", "items", "value"]
        .iter()
        .find_map(|k| body.get(k).and_then(Value::as_array))
        .or_else(|| body.pointer("/webPages/value").and_then(Value::as_array))
}

fn first_str<'a>(item: &'a Value, keys: &[&str]) -> Option<&'a str> {
    keys.iter()
        .find_map(|k| item.get(k).and_then(Value::as_str))
        .filter(|s| !s.trim().is_empty())
}

/// Map a provider response positionally onto a ranked list.
pub fn adapt_response(query: &str, body: &Value, limit: usize) -> Result<RankedList, RetrievalError> {
    let items = result_array(body)
        .ok_or_else(|| RetrievalError::Protocol("no result list in response".into()))?;
    let docs = items
        .iter()
        .filter_map(|item| {
            let title = first_str(item, &["name", "title"]).unwrap_or_default();
            let url = first_str(item, &["url", "link"]).map(str::to_string);
            let snippet = first_str(item, &["snippet", "content", "description", "text"])
                .unwrap_or_default();
            Document::new(title, snippet, url).ok()
        })
        .take(limit)
        .collect();
    Ok(RankedList::new(query, docs))
}

impl Retriever for RemoteSearch {
    fn id(&self) -> String {
        format!("remote:{}", self.config.url)
    }

    fn search(&self, query: &str, limit: usize) -> Result<RankedList, RetrievalError> {
        if limit == 0 {
            return Err(RetrievalError::InvalidLimit);
        }
        let mut endpoint = url::Url::parse(&self.config.url)
            .map_err(|e| RetrievalError::Other(format!("invalid search url: {e}")))?;
        endpoint
            .query_pairs_mut()
            .append_pair("q", query)
            .append_pair("count", &limit.to_string());
        let delivered = http::send_with_retry(&self.config.retry, self.limiter.as_ref(), || {
            let mut builder = self.client.get(endpoint.as_str());
            if let Some(key) = &self.config.api_key {
                builder = match &self.config.key_header {
                    Some(header) => builder.header(header.as_str(), key.as_str()),
                    None => builder.bearer_auth(key),
                };
            }
            builder
        })?;
        let body: Value = serde_json::from_str(&delivered.body)
            .map_err(|e| RetrievalError::Protocol(e.to_string()))?;
        adapt_response(query, &body, limit)
    }
}
