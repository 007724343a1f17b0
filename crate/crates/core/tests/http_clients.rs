mod support;

use std::time::{Duration, Instant};

use dmqr_core::http::{RateLimiter, RetryPolicy};
use dmqr_core::llm::{ChatRequest, Completer, HttpCompleter, HttpCompleterConfig, LlmError};
use dmqr_core::ranking::{HttpRerankClient, RerankClient, RerankError};
use dmqr_core::retrieval::{RemoteSearch, RemoteSearchConfig, RetrievalError, Retriever};
use support::{dead_url, MockServer, Reply};

const OK_CHAT: &str = r#"{"choices":[{"message":{"role":"assistant","content":"hello there"}}],"usage":{"prompt_tokens":7,"completion_tokens":2}}"#;

fn fast_retry(max_retries: u32) -> RetryPolicy {
    RetryPolicy {
        max_retries,
        base_delay: Duration::from_millis(5),
        max_delay: Duration::from_millis(50),
    }
}

fn completer(url: &str, retries: u32) -> HttpCompleter {
    let mut config = HttpCompleterConfig::new(url, "test-model");
    config.api_key = Some("sk-test".into());
    config.retry = fast_retry(retries);
    HttpCompleter::new(config)
}

#[test]
fn chat_success_sends_openai_shape() {
    let server = MockServer::start(vec![Reply::json(200, OK_CHAT)]);
    let c = completer(&server.url, 3);
    let resp = c
        .complete(&ChatRequest::new("hi").with_system("be brief"))
        .unwrap();
    assert_eq!(resp.text, "hello there");
    assert_eq!(resp.retries, 0);
    assert_eq!((resp.usage.prompt_tokens, resp.usage.completion_tokens), (7, 2));
    let req = &server.recorded()[0];
    assert_eq!(req.method, "POST");
    assert_eq!(req.header("authorization"), Some("Bearer sk-test"));
    let body: serde_json::Value = serde_json::from_str(&req.body).unwrap();
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][1]["content"], "hi");
    assert_eq!(body["temperature"], 0.0);
}

#[test]
fn auth_failure_is_not_retried() {
    let server = MockServer::start(vec![Reply::json(401, "{}")]);
    let err = completer(&server.url, 3)
        .complete(&ChatRequest::new("hi"))
        .unwrap_err();
    assert!(matches!(err, LlmError::Auth { status: 401 }), "{err:?}");
    assert_eq!(server.count(), 1);
}

#[test]
fn server_error_then_success_counts_one_retry() {
    let server = MockServer::start(vec![Reply::json(503, "{}"), Reply::json(200, OK_CHAT)]);
    let resp = completer(&server.url, 3)
        .complete(&ChatRequest::new("hi"))
        .unwrap();
    assert_eq!(resp.retries, 1);
    assert_eq!(server.count(), 2);
}

#[test]
fn rate_limit_exhausts_retries() {
    let server = MockServer::start(vec![Reply::json(429, "{}").header("Retry-After", "0")]);
    let err = completer(&server.url, 2)
        .complete(&ChatRequest::new("hi"))
        .unwrap_err();
    assert!(matches!(err, LlmError::RateLimited { retry_after_secs: Some(0) }), "{err:?}");
    assert_eq!(server.count(), 3);
}

#[test]
fn client_error_is_fatal() {
    let server = MockServer::start(vec![Reply::json(400, "bad model")]);
    let err = completer(&server.url, 3)
        .complete(&ChatRequest::new("hi"))
        .unwrap_err();
    assert!(matches!(err, LlmError::BadRequest { status: 400, .. }), "{err:?}");
    assert_eq!(server.count(), 1);
}

#[test]
fn empty_choices_is_empty_completion() {
    let server = MockServer::start(vec![Reply::json(200, r#"{"choices":[]}"#)]);
    let err = completer(&server.url, 0)
        .complete(&ChatRequest::new("hi"))
        .unwrap_err();
    assert!(matches!(err, LlmError::EmptyCompletion), "{err:?}");
}

#[test]
fn unreachable_endpoint_is_transport_error() {
    let err = completer(&dead_url(), 1)
        .complete(&ChatRequest::new("hi"))
        .unwrap_err();
    assert!(matches!(err, LlmError::Transport { attempts: 2, .. }), "{err:?}");
}

#[test]
fn rate_limiter_paces_calls() {
    let limiter = RateLimiter::new(50.0, 1);
    let start = Instant::now();
    for _ in 0..6 {
        limiter.acquire();
    }
    // 1 burst token + 5 refills at 20 ms each
    assert!(start.elapsed() >= Duration::from_millis(90));
}

#[test]
fn remote_search_maps_results() {
    let body = r#"{"webPages":{"value":[
        {"name":"First","url":"https://a.example/x/","snippet":"alpha text"},
        {"name":"Second","url":"https://b.example/y","snippet":"beta text"},
        {"name":"Third","url":"https://c.example/z","snippet":"gamma text"}]}}"#;
    let server = MockServer::start(vec![Reply::json(200, body)]);
    let mut config = RemoteSearchConfig::new(format!("{}/search", server.url));
    config.api_key = Some("k".into());
    config.key_header = Some("Ocp-Apim-Subscription-Key".into());
    let search = RemoteSearch::new(config);
    let list = search.search("what is alpha", 2).unwrap();
    assert_eq!(list.docs.len(), 2);
    assert_eq!(list.docs[0].title, "First");
    assert_eq!(list.docs[0].retrieval_rank, 1);
    assert_eq!(list.docs[0].key.as_str(), "url:https://a.example/x");
    let req = &server.recorded()[0];
    assert_eq!(req.method, "GET");
    assert!(req.path.starts_with("/search?q=what+is+alpha&count=2"), "{}", req.path);
    assert_eq!(req.header("ocp-apim-subscription-key"), Some("k"));
}

#[test]
fn remote_search_errors() {
    let server = MockServer::start(vec![Reply::json(403, "{}")]);
    let search = RemoteSearch::new(RemoteSearchConfig::new(&server.url));
    assert!(matches!(search.search("q", 5), Err(RetrievalError::Auth { .. })));

    let server = MockServer::start(vec![Reply::json(200, r#"{"nothing":1}"#)]);
    let search = RemoteSearch::new(RemoteSearchConfig::new(&server.url));
    assert!(matches!(search.search("q", 5), Err(RetrievalError::Protocol(_))));
}

#[test]
fn rerank_client_round_trip() {
    let server = MockServer::start(vec![Reply::json(200, r#"{"scores":[0.1,0.9]}"#)]);
    let client = HttpRerankClient::new(&server.url, Some("rk".into())).with_retry(fast_retry(0));
    let scores = client
        .score("q", &["one".to_string(), "two".to_string()])
        .unwrap();
    assert_eq!(scores, vec![0.1, 0.9]);
    let body: serde_json::Value = serde_json::from_str(&server.recorded()[0].body).unwrap();
    assert_eq!(body["passages"][1], "two");
}

#[test]
fn rerank_client_failures() {
    let client = HttpRerankClient::new(dead_url(), None).with_retry(fast_retry(0));
    assert!(matches!(client.score("q", &["p".into()]), Err(RerankError::Http(_))));
    let server = MockServer::start(vec![Reply::json(200, "not json")]);
    let client = HttpRerankClient::new(&server.url, None).with_retry(fast_retry(0));
    assert!(matches!(client.score("q", &["p".into()]), Err(RerankError::Protocol(_))));
}
