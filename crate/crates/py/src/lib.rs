//! Python bindings for the dmqr engine.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::Arc;

use dmqr_core::evaluation::{self, run_experiment, ExperimentConfig, Judge, Method};
use dmqr_core::model::{self, Document, DocumentKey, PipelineConfig, Query, RankedList, StrategyId};
use dmqr_core::ranking::rrf_fuse;
use dmqr_core::retrieval::{tokenize as core_tokenize, Bm25Index, CorpusDoc, LocalRetriever, ResponseCache};
use dmqr_core::rewriting;
use dmqr_core::{Engine as CoreEngine, ScriptedCompleter};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

create_exception!(dmqr, DmqrError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    DmqrError::new_err(e.to_string())
}

fn from_json<T: serde::de::DeserializeOwned + Default>(raw: Option<&str>) -> PyResult<T> {
    match raw {
        None => Ok(T::default()),
        Some(s) => serde_json::from_str(s).map_err(|e| PyValueError::new_err(e.to_string())),
    }
}

/// In-memory BM25 index over a corpus of `(id, text, title, url)` records.
#[pyclass(frozen)]
struct Index {
    inner: Bm25Index,
}

#[pymethods]
impl Index {
    /// Build from a list of dicts with `id`, `text` and optional `title`, `url`.
    #[staticmethod]
    fn build(docs: Vec<HashMap<String, String>>) -> PyResult<Self> {
        let corpus = docs
            .into_iter()
            .map(|mut d| {
                Ok(CorpusDoc {
                    id: d.remove("id").ok_or_else(|| PyValueError::new_err("document without id"))?,
                    text: d.remove("text").ok_or_else(|| PyValueError::new_err("document without text"))?,
                    title: d.remove("title").unwrap_or_default(),
                    url: d.remove("url"),
                })
            })
            .collect::<PyResult<Vec<_>>>()?;
        Bm25Index::build(corpus).map(|inner| Self { inner }).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Bm25Index::load(&path).map(|inner| Self { inner }).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    /// `(doc_id, score)` pairs, best first.
    #[pyo3(signature = (query, limit=10))]
    fn search(&self, query: &str, limit: usize) -> Vec<(String, f64)> {
        self.inner
            .search(query, limit)
            .into_iter()
            .map(|(i, s)| (self.inner.doc(i).id.clone(), s))
            .collect()
    }

    #[getter]
    fn vocabulary_size(&self) -> usize {
        self.inner.vocabulary_size()
    }

    #[getter]
    fn avg_len(&self) -> f64 {
        self.inner.avg_len()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Index(documents={}, vocabulary={})", self.inner.len(), self.inner.vocabulary_size())
    }
}

/// Canned completions: keys are prompt hashes, prompt substrings, or `"*"`.
#[pyclass(frozen)]
struct ScriptedLLM {
    inner: Arc<ScriptedCompleter>,
}

#[pymethods]
impl ScriptedLLM {
    #[new]
    fn new(responses: HashMap<String, String>) -> Self {
        Self {
            inner: Arc::new(ScriptedCompleter::from_map(responses)),
        }
    }

    #[getter]
    fn calls(&self) -> usize {
        self.inner.calls()
    }
}

/// Rewrite, retrieve, fuse and answer over a local index.
#[pyclass(frozen)]
struct Engine {
    inner: CoreEngine,
    llm: Arc<ScriptedCompleter>,
    key_to_ids: BTreeMap<DocumentKey, Vec<String>>,
}

#[pymethods]
impl Engine {
    #[new]
    #[pyo3(signature = (llm, index, cache_dir=None))]
    fn new(llm: &ScriptedLLM, index: &Index, cache_dir: Option<PathBuf>) -> Self {
        let retriever = Arc::new(LocalRetriever::new(index.inner.clone()));
        let key_to_ids = retriever.key_to_ids();
        let mut inner = CoreEngine::new(llm.inner.clone(), retriever);
        if let Some(dir) = cache_dir {
            inner = inner.with_cache(ResponseCache::new(dir));
        }
        Self {
            inner,
            llm: llm.inner.clone(),
            key_to_ids,
        }
    }

    /// One rewrite of `query` with the given strategy id.
    fn rewrite(&self, query: &str, strategy: &str) -> PyResult<String> {
        let id: StrategyId = strategy.parse().map_err(err)?;
        let q = Query::new("q", query).map_err(err)?;
        rewriting::rewrite(&self.inner.pool, &id, &q, self.llm.as_ref())
            .map(|r| r.text)
            .map_err(err)
    }

    /// Run the pipeline and return the trace as a JSON string.
    #[pyo3(signature = (query, method="DMQR", config=None))]
    fn ask(&self, py: Python<'_>, query: &str, method: &str, config: Option<&str>) -> PyResult<String> {
        let method: Method = method.parse().map_err(err)?;
        let base: PipelineConfig = from_json(config)?;
        let q = Query::new("q", query).map_err(err)?;
        let (plan, pipeline) = method.configure(&base);
        py.detach(|| self.inner.run(&q, &pipeline, &plan))
            .map(|t| t.to_json().to_string())
            .map_err(err)
    }

    /// Evaluate a dataset (JSONL or JSON array text) with gold-label judging.
    /// Returns the metrics report as JSON.
    #[pyo3(signature = (dataset, method="DMQR", config=None))]
    fn evaluate(&self, py: Python<'_>, dataset: &str, method: &str, config: Option<&str>) -> PyResult<String> {
        let method: Method = method.parse().map_err(err)?;
        let items = evaluation::parse_dataset(dataset).map_err(err)?;
        let config: ExperimentConfig = from_json(config)?;
        let judge = Judge::gold_labels(self.key_to_ids.clone());
        let report = py.detach(|| run_experiment(&self.inner, &items, &config, method, &judge));
        Ok(report.to_json_pretty())
    }
}

/// Content key for a document: normalized URL if given, else normalized text.
#[pyfunction]
#[pyo3(signature = (content, url=None))]
fn document_key(content: &str, url: Option<&str>) -> PyResult<String> {
    model::document_key(url, content).map(|k| k.0).map_err(err)
}

/// Reciprocal rank fusion over ranked lists of document texts.
/// Returns `(key, score)` pairs, best first.
#[pyfunction]
#[pyo3(signature = (lists, k=60))]
fn rrf(lists: Vec<Vec<String>>, k: u32) -> PyResult<Vec<(String, f64)>> {
    let ranked = lists
        .into_iter()
        .enumerate()
        .map(|(i, texts)| {
            let docs = texts
                .into_iter()
                .map(|t| Document::new("", t, None))
                .collect::<Result<Vec<_>, _>>()
                .map_err(err)?;
            Ok(RankedList::new(format!("list{i}"), docs))
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok(rrf_fuse(&ranked, k)
        .into_iter()
        .map(|f| (f.doc.key.0, f.fused_score))
        .collect())
}

#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    core_tokenize(text)
}

#[pyfunction]
fn normalize_answer(text: &str) -> String {
    evaluation::normalize_answer(text)
}

#[pyfunction]
fn exact_match(prediction: &str, golds: Vec<String>) -> f64 {
    evaluation::exact_match(prediction, &golds)
}

#[pyfunction]
fn f1(prediction: &str, golds: Vec<String>) -> f64 {
    evaluation::f1_token(prediction, &golds)
}

#[pyfunction]
fn hit_at_k(relevant: Vec<bool>) -> f64 {
    evaluation::hit_at_k(&relevant)
}

#[pyfunction]
fn precision_at_k(relevant: Vec<bool>, k: usize) -> f64 {
    evaluation::precision_at_k(&relevant, k)
}

#[pymodule]
fn dmqr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("DmqrError", m.py().get_type::<DmqrError>())?;
    m.add_class::<Index>()?;
    m.add_class::<ScriptedLLM>()?;
    m.add_class::<Engine>()?;
    m.add_function(wrap_pyfunction!(document_key, m)?)?;
    m.add_function(wrap_pyfunction!(rrf, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_answer, m)?)?;
    m.add_function(wrap_pyfunction!(exact_match, m)?)?;
    m.add_function(wrap_pyfunction!(f1, m)?)?;
    m.add_function(wrap_pyfunction!(hit_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(precision_at_k, m)?)?;
    Ok(())
}
