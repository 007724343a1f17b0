#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use dmqr_core::llm::ScriptedCompleter;
use dmqr_core::model::{Query, RankedList, StrategyId};
use dmqr_core::retrieval::{Bm25Index, CorpusDoc, LocalRetriever, RetrievalError, Retriever};
use dmqr_core::rewriting::{fusion_request, rewrite_request, StrategyPool};
use dmqr_core::selection::{builtin_demonstrations, selection_request};
use dmqr_core::template::TemplateSet;

pub fn doc(id: &str, text: &str) -> CorpusDoc {
    CorpusDoc {
        id: id.into(),
        title: String::new(),
        text: text.into(),
        url: None,
    }
}

pub fn local(docs: Vec<CorpusDoc>) -> LocalRetriever {
    LocalRetriever::new(Bm25Index::build(docs).unwrap())
}

/// Builds a scripted completer keyed on the exact prompts the engine sends.
pub struct Script {
    templates: TemplateSet,
    pool: StrategyPool,
    mock: ScriptedCompleter,
}

impl Default for Script {
    fn default() -> Self {
        Self::new()
    }
}

impl Script {
    pub fn new() -> Self {
        let templates = TemplateSet::builtin();
        Self {
            pool: StrategyPool::builtin(&templates),
            templates,
            mock: ScriptedCompleter::new(),
        }
    }

    pub fn rewrite(mut self, query: &Query, id: StrategyId, output: &str) -> Self {
        let req = rewrite_request(&self.pool, &id, query).unwrap();
        self.mock = self.mock.with_prompt(&req, output);
        self
    }

    /// Selection fixture for adaptive runs over the four diverse strategies.
    pub fn select(mut self, query: &Query, output: &str) -> Self {
        let sub = self.pool.subset(&StrategyId::DMQR).unwrap();
        let req = selection_request(
            self.templates.get("select").unwrap(),
            query,
            &sub,
            &builtin_demonstrations(),
        )
        .unwrap();
        self.mock = self.mock.with_prompt(&req, output);
        self
    }

    pub fn fusion(mut self, query: &Query, count: usize, output: &str) -> Self {
        let req = fusion_request(&self.templates, query, count).unwrap();
        self.mock = self.mock.with_prompt(&req, output);
        self
    }

    pub fn pattern(mut self, pattern: &str, output: &str) -> Self {
        self.mock = self.mock.with_pattern(pattern, output);
        self
    }

    /// Completion for anything not otherwise scripted (answers, judges).
    pub fn fallback(mut self, output: &str) -> Self {
        self.mock = self.mock.with_default(output);
        self
    }

    pub fn build(self) -> Arc<ScriptedCompleter> {
        Arc::new(self.mock)
    }
}

/// Wraps a retriever, counting calls and failing on chosen query texts.
pub struct Instrumented<R> {
    pub inner: R,
    pub calls: AtomicUsize,
    pub fail_on: Vec<String>,
}

impl<R: Retriever> Instrumented<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
            fail_on: Vec::new(),
        }
    }

    pub fn failing_on(mut self, text: &str) -> Self {
        self.fail_on.push(text.to_string());
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<R: Retriever> Retriever for Instrumented<R> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn search(&self, query: &str, limit: usize) -> Result<RankedList, RetrievalError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if self.fail_on.iter().any(|f| f == query) {
            return Err(RetrievalError::Other("injected failure".into()));
        }
        self.inner.search(query, limit)
    }
}

pub struct Reply {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl Reply {
    pub fn json(status: u16, body: &str) -> Self {
        Self {
            status,
            headers: vec![("Content-Type".into(), "application/json".into())],
            body: body.into(),
        }
    }

    pub fn header(mut self, name: &str, value: &str) -> Self {
        self.headers.push((name.into(), value.into()));
        self
    }
}

#[derive(Debug, Clone)]
pub struct Recorded {
    pub method: String,
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl Recorded {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

/// Minimal HTTP/1.1 server answering scripted replies in order; the last
/// reply repeats once the script runs out.
pub struct MockServer {
    pub url: String,
    pub requests: Arc<Mutex<Vec<Recorded>>>,
    _handle: JoinHandle<()>,
}

fn read_request(stream: &mut TcpStream) -> Option<Recorded> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut line = String::new();
    reader.read_line(&mut line).ok()?;
    let mut parts = line.split_whitespace();
    let method = parts.next()?.to_string();
    let path = parts.next()?.to_string();
    let mut headers = Vec::new();
    let mut length = 0usize;
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).ok()?;
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        if let Some((n, v)) = h.split_once(':') {
            if n.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().unwrap_or(0);
            }
            headers.push((n.trim().to_string(), v.trim().to_string()));
        }
    }
    let mut body = vec![0u8; length];
    reader.read_exact(&mut body).ok()?;
    Some(Recorded {
        method,
        path,
        headers,
        body: String::from_utf8_lossy(&body).into_owned(),
    })
}

impl MockServer {
    pub fn start(replies: Vec<Reply>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&requests);
        let handle = std::thread::spawn(move || {
            let mut served = 0usize;
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let Some(req) = read_request(&mut stream) else { continue };
                log.lock().unwrap().push(req);
                let reply = &replies[served.min(replies.len() - 1)];
                served += 1;
                let mut out = format!(
                    "HTTP/1.1 {} X\r\nContent-Length: {}\r\nConnection: close\r\n",
                    reply.status,
                    reply.body.len()
                );
                for (n, v) in &reply.headers {
                    out.push_str(&format!("{n}: {v}\r\n"));
                }
                out.push_str("\r\n");
                out.push_str(&reply.body);
                let _ = stream.write_all(out.as_bytes());
                let _ = stream.flush();
            }
        });
        Self {
            url,
            requests,
            _handle: handle,
        }
    }

    pub fn count(&self) -> usize {
        self.requests.lock().unwrap().len()
    }

    pub fn recorded(&self) -> Vec<Recorded> {
        self.requests.lock().unwrap().clone()
    }
}

/// A localhost URL nothing listens on.
pub fn dead_url() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    format!("http://{addr}")
}
