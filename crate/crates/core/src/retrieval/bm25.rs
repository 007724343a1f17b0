//! Okapi BM25 over an in-memory inverted index.
//!
//! score(q, d) = Σ_t idf(t) · tf·(k1+1) / (tf + k1·(1 − b + b·|d|/avgdl))
//! idf(t)      = ln(1 + (N − df + 0.5) / (df + 0.5))
//!
//! The `1 +` inside the logarithm keeps every idf positive, so a document
//! scores zero exactly when it shares no term with the query.

use std::collections::{BTreeMap, HashSet};
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const FORMAT: &str = "dmqr-bm25";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("duplicate document id {0:?}")]
    DuplicateDocId(String),
    #[error("document {0:?} has empty text")]
    EmptyText(String),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("index not found at {0}")]
    IndexMissing(String),
    #[error("unsupported index format: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusDoc {
    pub id: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
    #[serde(default)]
    pub url: Option<String>,
}

/// Lowercase, split on non-alphanumeric characters, drop empty tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

pub fn idf(n: usize, df: usize) -> f64 {
    let (n, df) = (n as f64, df as f64);
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

/// Contribution of one query term occurrence.
pub fn term_weight(idf: f64, tf: u32, doc_len: u32, avg_len: f64, params: Bm25Params) -> f64 {
    let tf = f64::from(tf);
    let norm = 1.0 - params.b + params.b * f64::from(doc_len) / avg_len;
    idf * (tf * (params.k1 + 1.0)) / (tf + params.k1 * norm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bm25Index {
    format: String,
    version: u32,
    params: Bm25Params,
    docs: Vec<CorpusDoc>,
    doc_lengths: Vec<u32>,
    avg_len: f64,
    /// term -> postings sorted by doc index
    postings: BTreeMap<String, Vec<Posting>>,
}

/// Indexed text of a corpus document: title followed by body.
pub fn indexed_text(doc: &CorpusDoc) -> String {
    if doc.title.is_empty() {
        doc.text.clone()
    } else {
        format!("{} {}", doc.title, doc.text)
    }
}

impl Bm25Index {
    pub fn build(corpus: impl IntoIterator<Item = CorpusDoc>) -> Result<Self, IndexError> {
        Self::build_with(Bm25Params::default(), corpus)
    }

    pub fn build_with(
        params: Bm25Params,
        corpus: impl IntoIterator<Item = CorpusDoc>,
    ) -> Result<Self, IndexError> {
        let mut docs = Vec::new();
        let mut doc_lengths = Vec::new();
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut ids = HashSet::new();
        for doc in corpus {
            if !ids.insert(doc.id.clone()) {
                return Err(IndexError::DuplicateDocId(doc.id));
            }
            if doc.text.trim().is_empty() {
                return Err(IndexError::EmptyText(doc.id));
            }
            let idx = docs.len() as u32;
            let tokens = tokenize(&indexed_text(&doc));
            doc_lengths.push(tokens.len() as u32);
            let mut counts: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *counts.entry(t).or_default() += 1;
            }
            for (term, tf) in counts {
                postings.entry(term).or_default().push(Posting { doc: idx, tf });
            }
            docs.push(doc);
        }
        if docs.is_empty() {
            return Err(IndexError::EmptyCorpus);
        }
        let total: u64 = doc_lengths.iter().map(|&l| u64::from(l)).sum();
        if total == 0 {
            return Err(IndexError::EmptyCorpus);
        }
        let avg_len = total as f64 / docs.len() as f64;
        Ok(Self {
            format: FORMAT.into(),
            version: FORMAT_VERSION,
            params,
            docs,
            doc_lengths,
            avg_len,
            postings,
        })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn vocabulary_size(&self) -> usize {
        self.postings.len()
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn docs(&self) -> &[CorpusDoc] {
        &self.docs
    }

    pub fn doc(&self, idx: usize) -> &CorpusDoc {
        &self.docs[idx]
    }

    pub fn doc_len(&self, idx: usize) -> u32 {
        self.doc_lengths[idx]
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    pub fn df(&self, term: &str) -> usize {
        self.postings(term).len()
    }

    pub fn tf(&self, term: &str, doc: usize) -> u32 {
        let list = self.postings(term);
        list.binary_search_by_key(&(doc as u32), |p| p.doc)
            .map_or(0, |i| list[i].tf)
    }

    /// BM25 of document `doc` for already-tokenized `query_terms`; each
    /// occurrence of a repeated term contributes again.
    pub fn score(&self, query_terms: &[String], doc: usize) -> f64 {
        let mut total = 0.0;
        for term in query_terms {
            let tf = self.tf(term, doc);
            if tf > 0 {
                let idf = idf(self.len(), self.df(term));
                total += term_weight(idf, tf, self.doc_lengths[doc], self.avg_len, self.params);
            }
        }
        total
    }

    /// Documents with positive score, best first, ties by doc id ascending.
    pub fn search(&self, query: &str, limit: usize) -> Vec<(usize, f64)> {
        let terms = tokenize(query);
        let mut acc = vec![0.0f64; self.len()];
        for term in &terms {
            let list = self.postings(term);
            if list.is_empty() {
                continue;
            }
            let idf = idf(self.len(), list.len());
            for p in list {
                let d = p.doc as usize;
                acc[d] += term_weight(idf, p.tf, self.doc_lengths[d], self.avg_len, self.params);
            }
        }
        let mut hits: Vec<(usize, f64)> = acc
            .into_iter()
            .enumerate()
            .filter(|(_, s)| *s > 0.0)
            .collect();
        hits.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.docs[a.0].id.cmp(&self.docs[b.0].id))
        });
        hits.truncate(limit);
        hits
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        let io = |source| IndexError::Io {
            path: path.display().to_string(),
            source,
        };
        let json = serde_json::to_vec(self).map_err(|e| io(e.into()))?;
        std::fs::write(path, json).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        if !path.exists() {
            return Err(IndexError::IndexMissing(path.display().to_string()));
        }
        let raw = std::fs::read(path).map_err(|source| IndexError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let index: Self =
            serde_json::from_slice(&raw).map_err(|e| IndexError::Format(e.to_string()))?;
        if index.format != FORMAT || index.version != FORMAT_VERSION {
            return Err(IndexError::Format(format!(
                "{} v{}",
                index.format, index.version
            )));
        }
        Ok(index)
    }
}

/// Free-function form of [`Bm25Index::score`].
pub fn bm25_score(index: &Bm25Index, query_terms: &[String], doc: usize) -> f64 {
    index.score(query_terms, doc)
}

/// Read a JSON Lines corpus. Blank lines are skipped.
pub fn read_corpus_jsonl(path: &Path) -> Result<Vec<CorpusDoc>, IndexError> {
    let file = std::fs::File::open(path).map_err(|source| IndexError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut docs = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| IndexError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: CorpusDoc = serde_json::from_str(&line).map_err(|e| IndexError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        docs.push(doc);
    }
    Ok(docs)
}
