//! Cross-query aggregation: dedup, reciprocal rank fusion, lexical and
//! remote reranking, top-K.
//!
//! Every ordering here breaks score ties by `DocumentKey` ascending.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::http::{self, HttpError, RetryPolicy};
use crate::model::{Document, Query, QuerySource, RankedList};
use crate::retrieval::{idf, term_weight, tokenize, Bm25Params};

/// One appearance of a document in a per-query list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contribution {
    pub query: String,
    pub source: QuerySource,
    pub rank: u32,
}

/// A deduplicated document with every list position it was seen at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub doc: Document,
    pub contributing: Vec<Contribution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedDoc {
    pub doc: Document,
    pub fused_score: f64,
    pub contributing: Vec<Contribution>,
}

fn by_score_then_key(a: &FusedDoc, b: &FusedDoc) -> Ordering {
    b.fused_score
        .total_cmp(&a.fused_score)
        .then_with(|| a.doc.key.cmp(&b.doc.key))
}

/// Merge lists; the first occurrence (earliest list, then lowest rank)
/// survives and collects the provenance of all later duplicates.
pub fn deduplicate(lists: &[RankedList]) -> Vec<Candidate> {
    let mut out: Vec<Candidate> = Vec::new();
    let mut index: HashMap<_, usize> = HashMap::new();
    for list in lists {
        for doc in &list.docs {
            let contribution = Contribution {
                query: list.query.clone(),
                source: doc.retrieved_by.clone(),
                rank: doc.retrieval_rank,
            };
            match index.get(&doc.key) {
                Some(&i) => out[i].contributing.push(contribution),
                None => {
                    index.insert(doc.key.clone(), out.len());
                    out.push(Candidate {
                        doc: doc.clone(),
                        contributing: vec![contribution],
                    });
                }
            }
        }
    }
    out
}

/// RRF over candidates using their recorded ranks.
pub fn rrf_from_candidates(candidates: &[Candidate], k: u32) -> Vec<FusedDoc> {
    let mut fused: Vec<FusedDoc> = candidates
        .iter()
        .map(|c| FusedDoc {
            doc: c.doc.clone(),
            fused_score: c
                .contributing
                .iter()
                .fold(0.0, |acc, p| acc + 1.0 / (f64::from(k) + f64::from(p.rank))),
            contributing: c.contributing.clone(),
        })
        .collect();
    fused.sort_by(by_score_then_key);
    fused
}

/// score(d) = Σ over lists containing d of 1 / (k + rank).
pub fn rrf_fuse(lists: &[RankedList], k: u32) -> Vec<FusedDoc> {
    rrf_from_candidates(&deduplicate(lists), k)
}

fn passage(doc: &Document) -> String {
    if doc.title.is_empty() {
        doc.content.clone()
    } else {
        format!("{}\n{}", doc.title, doc.content)
    }
}

/// BM25 of each candidate's title+content against the original query, with
/// the candidate set itself as the collection.
pub fn lexical_rerank(query: &Query, candidates: &[Candidate]) -> Vec<FusedDoc> {
    if candidates.is_empty() {
        return Vec::new();
    }
    let params = Bm25Params::default();
    let docs: Vec<Vec<String>> = candidates.iter().map(|c| tokenize(&passage(&c.doc))).collect();
    let total: usize = docs.iter().map(Vec::len).sum();
    let avg_len = (total as f64 / docs.len() as f64).max(1.0);
    let mut df: HashMap<&str, usize> = HashMap::new();
    for tokens in &docs {
        let mut seen: Vec<&str> = tokens.iter().map(String::as_str).collect();
        seen.sort_unstable();
        seen.dedup();
        for t in seen {
            *df.entry(t).or_default() += 1;
        }
    }
    let query_terms = tokenize(&query.text);
    let mut fused: Vec<FusedDoc> = candidates
        .iter()
        .zip(&docs)
        .map(|(c, tokens)| {
            let mut score = 0.0;
            for term in &query_terms {
                let tf = tokens.iter().filter(|t| *t == term).count() as u32;
                if tf > 0 {
                    let w = idf(docs.len(), df[term.as_str()]);
                    score += term_weight(w, tf, tokens.len() as u32, avg_len, params);
                }
            }
            FusedDoc {
                doc: c.doc.clone(),
                fused_score: score,
                contributing: c.contributing.clone(),
            }
        })
        .collect();
    fused.sort_by(by_score_then_key);
    fused
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RerankError {
    #[error(transparent)]
    Http(#[from] HttpError),
    #[error("reranker returned {got} scores for {expected} passages")]
    LengthMismatch { expected: usize, got: usize },
    #[error("malformed reranker response: {0}")]
    Protocol(String),
}

/// A cross-encoder style scoring service.
pub trait RerankClient: Send + Sync {
    fn score(&self, query: &str, passages: &[String]) -> Result<Vec<f64>, RerankError>;
}

/// POST `{query, passages}` → `{scores}`.
pub struct HttpRerankClient {
    url: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    client: reqwest::blocking::Client,
}

impl HttpRerankClient {
    pub fn new(url: impl Into<String>, api_key: Option<String>) -> Self {
        Self {
            url: url.into(),
            api_key,
            retry: RetryPolicy::default(),
            client: http::client(Duration::from_secs(30)),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }
}

#[derive(Deserialize)]
struct ScoresBody {
    scores: Vec<f64>,
}

impl RerankClient for HttpRerankClient {
    fn score(&self, query: &str, passages: &[String]) -> Result<Vec<f64>, RerankError> {
        let body = json!({"query": query, "passages": passages});
        let delivered = http::send_with_retry(&self.retry, None, || {
            let mut b = self.client.post(&self.url).json(&body);
            if let Some(key) = &self.api_key {
                b = b.bearer_auth(key);
            }
            b
        })?;
        let parsed: ScoresBody = serde_json::from_str(&delivered.body)
            .map_err(|e| RerankError::Protocol(e.to_string()))?;
        Ok(parsed.scores)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankOutcome {
    pub ranked: Vec<FusedDoc>,
    /// The remote call failed and RRF ordering was used instead.
    pub fallback: bool,
    pub error: Option<String>,
}

/// Order candidates by remote scores against the original query; any
/// failure (transport, protocol, length mismatch) falls back to RRF.
pub fn remote_rerank(
    query: &Query,
    candidates: &[Candidate],
    client: &dyn RerankClient,
    rrf_k: u32,
) -> RerankOutcome {
    if candidates.is_empty() {
        return RerankOutcome {
            ranked: Vec::new(),
            fallback: false,
            error: None,
        };
    }
    let passages: Vec<String> = candidates.iter().map(|c| passage(&c.doc)).collect();
    let result = client.score(&query.text, &passages).and_then(|scores| {
        if scores.len() == passages.len() {
            Ok(scores)
        } else {
            Err(RerankError::LengthMismatch {
                expected: passages.len(),
                got: scores.len(),
            })
        }
    });
    match result {
        Ok(scores) => {
            let mut ranked: Vec<FusedDoc> = candidates
                .iter()
                .zip(scores)
                .map(|(c, s)| FusedDoc {
                    doc: c.doc.clone(),
                    fused_score: s,
                    contributing: c.contributing.clone(),
                })
                .collect();
            ranked.sort_by(by_score_then_key);
            RerankOutcome {
                ranked,
                fallback: false,
                error: None,
            }
        }
        Err(e) => {
            log::warn!("remote reranker failed, using RRF: {e}");
            RerankOutcome {
                ranked: rrf_from_candidates(candidates, rrf_k),
                fallback: true,
                error: Some(e.to_string()),
            }
        }
    }
}

/// The first `min(k, len)` items.
pub fn top_k<T: Clone>(ranked: &[T], k: usize) -> Vec<T> {
    ranked[..k.min(ranked.len())].to_vec()
}
