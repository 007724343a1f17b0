//! Diverse multi-query rewriting for retrieval-augmented generation.

pub mod evaluation;
pub mod fanout;
pub mod http;
pub mod llm;
pub mod model;
pub mod pipeline;
pub mod ranking;
pub mod retrieval;
pub mod rewriting;
pub mod selection;
pub mod template;
pub mod trace;

pub use llm::{ChatRequest, ChatResponse, Completer, HttpCompleter, HttpCompleterConfig, ScriptedCompleter};
pub use model::{Document, DocumentKey, PipelineConfig, Query, QuerySet, RankedList, StrategyId};
pub use pipeline::{Engine, PipelineTrace, RewritePlan};
