//! Retrievers: a local BM25 index, a remote web-search client, and a
//! content-addressed response cache in front of either.

mod bm25;
mod cache;
mod remote;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::http::HttpError;
use crate::model::{Document, DocumentKey, RankedList};

pub use bm25::{
    bm25_score, idf, indexed_text, read_corpus_jsonl, term_weight, tokenize, Bm25Index,
    Bm25Params, CorpusDoc, IndexError, Posting,
};
pub use cache::{cache_key, CacheEntry, CacheStats, CacheStatus, ResponseCache};
pub use remote::{RemoteSearch, RemoteSearchConfig};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RetrievalError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },
    #[error("authentication rejected (HTTP {status})")]
    Auth { status: u16 },
    #[error("rate limited (retry after {retry_after_secs:?}s)")]
    RateLimited { retry_after_secs: Option<u64> },
    #[error("request rejected (HTTP {status}): {body}")]
    BadRequest { status: u16, body: String },
    #[error("malformed search response: {0}")]
    Protocol(String),
    #[error("index missing: {0}")]
    IndexMissing(String),
    #[error("limit must be at least 1")]
    InvalidLimit,
    #[error("{0}")]
    Other(String),
}

impl From<HttpError> for RetrievalError {
    fn from(e: HttpError) -> Self {
        match e {
            HttpError::Transport { message, attempts } => Self::Transport { message, attempts },
            HttpError::Auth { status } => Self::Auth { status },
            HttpError::RateLimited { retry_after_secs } => Self::RateLimited { retry_after_secs },
            HttpError::BadRequest { status, body } => Self::BadRequest { status, body },
            HttpError::Protocol(m) => Self::Protocol(m),
        }
    }
}

pub trait Retriever: Send + Sync {
    /// Identity used in cache keys; distinct backends must never share one.
    fn id(&self) -> String;

    /// At most `limit` documents ranked 1..len. Provenance (`retrieved_by`)
    /// is left for the caller to fill.
    fn search(&self, query: &str, limit: usize) -> Result<RankedList, RetrievalError>;
}

impl<T: Retriever + ?Sized> Retriever for Arc<T> {
    fn id(&self) -> String {
        (**self).id()
    }
    fn search(&self, query: &str, limit: usize) -> Result<RankedList, RetrievalError> {
        (**self).search(query, limit)
    }
}

/// BM25 retriever over an immutable index.
#[derive(Debug, Clone)]
pub struct LocalRetriever {
    index: Arc<Bm25Index>,
    fingerprint: String,
}

impl LocalRetriever {
    pub fn new(index: Bm25Index) -> Self {
        let mut hasher = Sha256::new();
        let params = index.params();
        hasher.update(format!("{}/{}", params.k1, params.b));
        for d in index.docs() {
            for part in [&d.id, &d.title, &d.text, d.url.as_deref().unwrap_or("")] {
                hasher.update((part.len() as u64).to_le_bytes());
                hasher.update(part.as_bytes());
            }
        }
        Self {
            index: Arc::new(index),
            fingerprint: hex::encode(hasher.finalize()),
        }
    }

    pub fn open(path: &Path) -> Result<Self, RetrievalError> {
        match Bm25Index::load(path) {
            Ok(index) => Ok(Self::new(index)),
            Err(IndexError::IndexMissing(p)) => Err(RetrievalError::IndexMissing(p)),
            Err(e) => Err(RetrievalError::IndexMissing(format!("{}: {e}", path.display()))),
        }
    }

    pub fn index(&self) -> &Bm25Index {
        &self.index
    }

    pub fn to_document(doc: &CorpusDoc) -> Document {
        Document::new(doc.title.clone(), doc.text.clone(), doc.url.clone())
            .expect("corpus documents have non-empty text")
    }

    /// Document key -> corpus ids that produce it.
    pub fn key_to_ids(&self) -> BTreeMap<DocumentKey, Vec<String>> {
        let mut map: BTreeMap<DocumentKey, Vec<String>> = BTreeMap::new();
        for d in self.index.docs() {
            map.entry(Self::to_document(d).key).or_default().push(d.id.clone());
        }
        map
    }
}

impl Retriever for LocalRetriever {
    fn id(&self) -> String {
        format!("local-bm25:{}", &self.fingerprint[..16])
    }

    fn search(&self, query: &str, limit: usize) -> Result<RankedList, RetrievalError> {
        if limit == 0 {
            return Err(RetrievalError::InvalidLimit);
        }
        let docs = self
            .index
            .search(query, limit)
            .into_iter()
            .map(|(idx, _)| Self::to_document(self.index.doc(idx)))
            .collect();
        Ok(RankedList::new(query, docs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus() -> Vec<CorpusDoc> {
        vec![
            CorpusDoc {
                id: "d1".into(),
                title: "Transformers".into(),
                text: "transformer paper citation".into(),
                url: Some("https://example.com/t".into()),
            },
            CorpusDoc {
                id: "d2".into(),
                title: String::new(),
                text: "weather today sunny".into(),
                url: None,
            },
        ]
    }

    #[test]
    fn local_search_ranked_list() {
        let r = LocalRetriever::new(Bm25Index::build(corpus()).unwrap());
        let list = r.search("transformer", 10).unwrap();
        assert_eq!(list.len(), 1);
        assert_eq!(list.docs[0].title, "Transformers");
        assert_eq!(list.docs[0].retrieval_rank, 1);
        assert!(list.is_well_formed());
        assert_eq!(r.search("transformer weather", 10).unwrap().len(), 2);
        assert_eq!(r.search("transformer weather", 1).unwrap().len(), 1);
        assert!(matches!(r.search("x", 0), Err(RetrievalError::InvalidLimit)));
    }

    #[test]
    fn retriever_id_tracks_corpus() {
        let a = LocalRetriever::new(Bm25Index::build(corpus()).unwrap());
        let b = LocalRetriever::new(Bm25Index::build(corpus()).unwrap());
        let c = LocalRetriever::new(Bm25Index::build(corpus().into_iter().take(1)).unwrap());
        assert_eq!(a.id(), b.id());
        assert_ne!(a.id(), c.id());
    }

    #[test]
    fn open_missing_index() {
        assert!(matches!(
            LocalRetriever::open(Path::new("/nonexistent/idx.json")),
            Err(RetrievalError::IndexMissing(_))
        ));
    }

    #[test]
    fn key_map_resolves_ids() {
        let r = LocalRetriever::new(Bm25Index::build(corpus()).unwrap());
        let map = r.key_to_ids();
        let key = crate::model::document_key(Some("https://example.com/t"), "").unwrap();
        assert_eq!(map[&key], vec!["d1".to_string()]);
    }
}
