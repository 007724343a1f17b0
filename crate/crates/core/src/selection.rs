//! Adaptive per-query strategy selection with a single LLM call.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{ChatRequest, Completer, LlmError};
use crate::model::{Query, StrategyId};
use crate::rewriting::StrategyPool;
use crate::template::{PromptTemplate, TemplateError, BUILTIN_DEMONSTRATIONS};

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("strategy pool is empty")]
    EmptyPool,
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("demonstrations file {path}: {message}")]
    Demonstrations { path: String, message: String },
}

/// A worked example shown to the selector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub query: String,
    pub chosen: Vec<StrategyId>,
}

pub fn builtin_demonstrations() -> Vec<Demonstration> {
    serde_json::from_str(BUILTIN_DEMONSTRATIONS).expect("built-in demonstrations parse")
}

pub fn load_demonstrations(path: &Path) -> Result<Vec<Demonstration>, SelectionError> {
    let err = |message: String| SelectionError::Demonstrations {
        path: path.display().to_string(),
        message,
    };
    let raw = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    serde_json::from_str(&raw).map_err(|e| err(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Non-empty, duplicate-free, in pool order.
    pub chosen: Vec<StrategyId>,
    /// Verbatim completion text.
    pub raw: String,
    pub fallback_used: bool,
}

fn describe_pool(pool: &StrategyPool) -> String {
    pool.descriptors()
        .iter()
        .map(|d| format!("- {} ({}): {}", d.id, d.id.full_name(), d.description))
        .collect::<Vec<_>>()
        .join("\n")
}

fn describe_demos(demos: &[Demonstration]) -> String {
    demos
        .iter()
        .map(|d| {
            let ids: Vec<String> = d.chosen.iter().map(ToString::to_string).collect();
            format!("Query: {}\nSelected strategies: {}", d.query, ids.join(", "))
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub fn selection_request(
    template: &PromptTemplate,
    query: &Query,
    pool: &StrategyPool,
    demos: &[Demonstration],
) -> Result<ChatRequest, SelectionError> {
    let descriptions = describe_pool(pool);
    let demonstrations = describe_demos(demos);
    let bindings = HashMap::from([
        ("strategy_descriptions", descriptions.as_str()),
        ("demonstrations", demonstrations.as_str()),
        ("query", query.text.as_str()),
    ]);
    Ok(ChatRequest::new(template.render(&bindings)?))
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric() && c != '_')
        .filter(|w| !w.is_empty())
        .map(str::to_uppercase)
        .collect()
}

fn contains_phrase(haystack: &[String], phrase: &[String]) -> bool {
    !phrase.is_empty() && haystack.windows(phrase.len()).any(|w| w == phrase)
}

/// Strategy ids or full names mentioned anywhere in `completion`, matched
/// case-insensitively on word boundaries, returned in pool order.
pub fn parse_selection(completion: &str, pool: &StrategyPool) -> Vec<StrategyId> {
    let tokens = words(completion);
    pool.descriptors()
        .iter()
        .filter(|d| {
            let id = d.id.to_string().to_uppercase();
            tokens.iter().any(|t| *t == id) || contains_phrase(&tokens, &words(&d.id.full_name()))
        })
        .map(|d| d.id.clone())
        .collect()
}

/// Ask the completer which strategies suit `query`. Unparseable output
/// falls back to the whole pool.
pub fn select_strategies(
    template: &PromptTemplate,
    query: &Query,
    pool: &StrategyPool,
    demos: &[Demonstration],
    completer: &dyn Completer,
) -> Result<SelectionResult, SelectionError> {
    if pool.is_empty() {
        return Err(SelectionError::EmptyPool);
    }
    let request = selection_request(template, query, pool, demos)?;
    let response = completer.complete(&request)?;
    Ok(interpret_selection(response.text, pool))
}

pub fn interpret_selection(raw: String, pool: &StrategyPool) -> SelectionResult {
    let chosen = parse_selection(&raw, pool);
    if chosen.is_empty() {
        SelectionResult {
            chosen: pool.ids(),
            raw,
            fallback_used: true,
        }
    } else {
        SelectionResult {
            chosen,
            raw,
            fallback_used: false,
        }
    }
}
