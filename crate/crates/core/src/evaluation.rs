//! Datasets, relevance judging, retrieval and answer metrics, and the
//! experiment runner.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::fanout::bounded_map;
use crate::llm::{ChatRequest, Completer, LlmError};
use crate::model::{Document, DocumentKey, PipelineConfig, Query, RerankerMode, SelectionMode, StrategyId};
use crate::pipeline::{Engine, RewritePlan};
use crate::rewriting::truncate_at_whitespace;
use crate::template::{PromptTemplate, TemplateSet};

/// Document text shown to the LLM judge is cut to this many characters.
pub const JUDGE_DOC_CHARS: usize = 2000;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("duplicate item id {0}")]
    DuplicateItem(String),
    #[error("unknown method {0:?}; expected one of OQR, REWRITE, HYDE, RAG_FUSION, DMQR, DMQR_ADAPTIVE")]
    UnknownMethod(String),
    #[error("cannot write report to {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalItem {
    pub id: String,
    pub question: String,
    #[serde(default)]
    pub gold_answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_doc_ids: Option<Vec<String>>,
}

impl EvalItem {
    pub fn validate(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("empty id".into());
        }
        if self.question.trim().is_empty() {
            return Err("empty question".into());
        }
        let has_docs = self.gold_doc_ids.as_ref().is_some_and(|d| !d.is_empty());
        if self.gold_answers.is_empty() && !has_docs {
            return Err("item needs a gold answer or a gold document id".into());
        }
        Ok(())
    }
}

fn strings(v: &Value) -> Vec<String> {
    match v {
        Value::String(s) => vec![s.clone()],
        Value::Array(items) => items.iter().flat_map(strings).collect(),
        _ => Vec::new(),
    }
}

fn push_unique(out: &mut Vec<String>, more: Vec<String>) {
    for s in more {
        if !out.contains(&s) {
            out.push(s);
        }
    }
}

/// Map one record in any supported format onto an `EvalItem`.
///
/// Accepted shapes: the native schema; HotpotQA (`_id`, `question`,
/// `answer`); AmbigNQ (`id`, `question`, `annotations` with single answers
/// or `qaPairs`, all aliases kept); FreshQA-style (`answer_0`..`answer_9`).
pub fn adapt_record(v: &Value) -> Result<EvalItem, String> {
    let obj = v.as_object().ok_or("record is not a JSON object")?;
    let question = obj
        .get("question")
        .and_then(Value::as_str)
        .ok_or("missing question")?
        .to_string();
    let id = match obj.get("id").or_else(|| obj.get("_id")) {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => return Err("missing id".into()),
    };
    let mut gold_answers = Vec::new();
    if let Some(g) = obj.get("gold_answers") {
        push_unique(&mut gold_answers, strings(g));
    }
    if let Some(a) = obj.get("answer") {
        push_unique(&mut gold_answers, strings(a));
    }
    if let Some(Value::Array(annotations)) = obj.get("annotations") {
        for ann in annotations {
            if let Some(a) = ann.get("answer") {
                push_unique(&mut gold_answers, strings(a));
            }
            if let Some(Value::Array(pairs)) = ann.get("qaPairs") {
                for pair in pairs {
                    if let Some(a) = pair.get("answer") {
                        push_unique(&mut gold_answers, strings(a));
                    }
                }
            }
        }
    }
    for i in 0..10 {
        if let Some(a) = obj.get(&format!("answer_{i}")) {
            push_unique(&mut gold_answers, strings(a));
        }
    }
    gold_answers.retain(|a| !a.trim().is_empty());
    let gold_doc_ids = obj.get("gold_doc_ids").map(strings);
    let item = EvalItem {
        id,
        question,
        gold_answers,
        gold_doc_ids,
    };
    item.validate()?;
    Ok(item)
}

/// Parse a dataset: JSON Lines, or a single JSON array of records.
pub fn parse_dataset(text: &str) -> Result<Vec<EvalItem>, EvalError> {
    let mut items = Vec::new();
    if text.trim_start().starts_with('[') {
        let records: Vec<Value> = serde_json::from_str(text).map_err(|e| EvalError::Malformed {
            line: e.line(),
            message: e.to_string(),
        })?;
        for (i, r) in records.iter().enumerate() {
            items.push(adapt_record(r).map_err(|message| EvalError::Malformed { line: i + 1, message })?);
        }
    } else {
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let malformed = |message: String| EvalError::Malformed { line: i + 1, message };
            let v: Value = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
            items.push(adapt_record(&v).map_err(malformed)?);
        }
    }
    if items.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let mut seen = std::collections::HashSet::new();
    for item in &items {
        if !seen.insert(item.id.as_str()) {
            return Err(EvalError::DuplicateItem(item.id.clone()));
        }
    }
    Ok(items)
}

pub fn load_dataset(path: &Path) -> Result<Vec<EvalItem>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_dataset(&text)
}

/// 1 if any judged document is relevant.
pub fn hit_at_k(relevant: &[bool]) -> f64 {
    if relevant.iter().any(|&r| r) {
        1.0
    } else {
        0.0
    }
}

/// Relevant documents among the first `k`, divided by `k`.
pub fn precision_at_k(relevant: &[bool], k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    relevant.iter().take(k).filter(|&&r| r).count() as f64 / k as f64
}

/// Lowercase, strip punctuation, drop the articles a/an/the, collapse
/// whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lower = s.to_lowercase();
    let no_punct: String = lower
        .chars()
        .filter(|c| !c.is_ascii_punctuation() && !is_unicode_punct(*c))
        .collect();
    no_punct
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn is_unicode_punct(c: char) -> bool {
    matches!(
        c,
        '\u{2010}'..='\u{2027}' | '\u{2030}'..='\u{205E}' | '\u{00A1}' | '\u{00A7}' | '\u{00AB}'
            | '\u{00B6}' | '\u{00B7}' | '\u{00BB}' | '\u{00BF}'
    )
}

pub fn exact_match(pred: &str, golds: &[String]) -> f64 {
    let p = normalize_answer(pred);
    if golds.iter().any(|g| normalize_answer(g) == p) {
        1.0
    } else {
        0.0
    }
}

fn f1_single(pred: &str, gold: &str) -> f64 {
    let p = normalize_answer(pred);
    let g = normalize_answer(gold);
    let pt: Vec<&str> = p.split_whitespace().collect();
    let gt: Vec<&str> = g.split_whitespace().collect();
    if pt.is_empty() && gt.is_empty() {
        return 1.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gt {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in &pt {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / pt.len() as f64;
    let recall = overlap as f64 / gt.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Best token F1 against any gold answer.
pub fn f1_token(pred: &str, golds: &[String]) -> f64 {
    golds.iter().map(|g| f1_single(pred, g)).fold(0.0, f64::max)
}

/// Leading yes/no of a judge completion, if there is one.
pub fn parse_yes_no(text: &str) -> Option<bool> {
    let word: String = text
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .chars()
        .take_while(|c| c.is_alphanumeric())
        .collect::<String>()
        .to_lowercase();
    match word.as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeKind {
    GoldLabels,
    LlmJudge,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub doc_key: DocumentKey,
    pub relevant: bool,
    pub judge: JudgeKind,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unparseable: bool,
}

pub enum Judge {
    /// Relevance from gold document ids; needs the local corpus mapping
    /// from document keys back to corpus ids.
    GoldLabels {
        key_to_ids: BTreeMap<DocumentKey, Vec<String>>,
    },
    LlmJudge {
        completer: Arc<dyn Completer>,
        template: PromptTemplate,
    },
}

impl Judge {
    pub fn gold_labels(key_to_ids: BTreeMap<DocumentKey, Vec<String>>) -> Self {
        Judge::GoldLabels { key_to_ids }
    }

    pub fn llm(completer: Arc<dyn Completer>, templates: &TemplateSet) -> Result<Self, crate::template::TemplateError> {
        Ok(Judge::LlmJudge {
            completer,
            template: templates.get("judge_relevance")?.clone(),
        })
    }

    pub fn kind(&self) -> JudgeKind {
        match self {
            Judge::GoldLabels { .. } => JudgeKind::GoldLabels,
            Judge::LlmJudge { .. } => JudgeKind::LlmJudge,
        }
    }
}

pub fn judge_relevance(item: &EvalItem, doc: &Document, judge: &Judge) -> Result<Judgment, LlmError> {
    match judge {
        Judge::GoldLabels { key_to_ids } => {
            let gold = item.gold_doc_ids.as_deref().unwrap_or(&[]);
            let relevant = key_to_ids
                .get(&doc.key)
                .is_some_and(|ids| ids.iter().any(|id| gold.contains(id)));
            Ok(Judgment {
                doc_key: doc.key.clone(),
                relevant,
                judge: JudgeKind::GoldLabels,
                unparseable: false,
            })
        }
        Judge::LlmJudge { completer, template } => {
            let body = format!("{}\n{}", doc.title.trim(), doc.content.trim());
            let (body, _) = truncate_at_whitespace(body.trim(), JUDGE_DOC_CHARS);
            let bindings = HashMap::from([("query", item.question.as_str()), ("document", body.as_str())]);
            let prompt = template
                .render(&bindings)
                .map_err(|e| LlmError::Config(e.to_string()))?;
            let response = completer.complete(&ChatRequest::new(prompt).with_max_tokens(16))?;
            let verdict = parse_yes_no(&response.text);
            Ok(Judgment {
                doc_key: doc.key.clone(),
                relevant: verdict.unwrap_or(false),
                judge: JudgeKind::LlmJudge,
                unparseable: verdict.is_none(),
            })
        }
    }
}

/// LLM-scored answer correctness; `None` when the grade is unparseable.
pub fn grade_answer(
    item: &EvalItem,
    answer: &str,
    completer: &dyn Completer,
    template: &PromptTemplate,
) -> Result<Option<bool>, LlmError> {
    let gold = item.gold_answers.join(" | ");
    let bindings = HashMap::from([
        ("gold", gold.as_str()),
        ("query", item.question.as_str()),
        ("answer", answer),
    ]);
    let prompt = template
        .render(&bindings)
        .map_err(|e| LlmError::Config(e.to_string()))?;
    let response = completer.complete(&ChatRequest::new(prompt).with_max_tokens(16))?;
    Ok(parse_yes_no(&response.text))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Method {
    Oqr,
    Rewrite,
    Hyde,
    RagFusion,
    Dmqr,
    DmqrAdaptive,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Oqr,
        Method::Rewrite,
        Method::Hyde,
        Method::RagFusion,
        Method::Dmqr,
        Method::DmqrAdaptive,
    ];

    /// Rewrite plan and effective pipeline config for this method.
    pub fn configure(&self, base: &PipelineConfig) -> (RewritePlan, PipelineConfig) {
        let mut config = base.clone();
        let plan = match self {
            Method::Oqr => RewritePlan::original_only(),
            Method::Rewrite => RewritePlan::SingleRewrite {
                strategy: StrategyId::BaselineRewrite,
            },
            Method::Hyde => RewritePlan::SingleRewrite {
                strategy: StrategyId::Hyde,
            },
            Method::RagFusion => {
                config.reranker_mode = RerankerMode::Rrf;
                RewritePlan::FusionVariants {
                    count: base.fusion_variants,
                }
            }
            Method::Dmqr => RewritePlan::dmqr(SelectionMode::FixedAll),
            Method::DmqrAdaptive => RewritePlan::dmqr(SelectionMode::Adaptive),
        };
        config.selection_mode = match self {
            Method::DmqrAdaptive => SelectionMode::Adaptive,
            _ => SelectionMode::FixedAll,
        };
        (plan, config)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Oqr => "OQR",
            Method::Rewrite => "REWRITE",
            Method::Hyde => "HYDE",
            Method::RagFusion => "RAG_FUSION",
            Method::Dmqr => "DMQR",
            Method::DmqrAdaptive => "DMQR_ADAPTIVE",
        })
    }
}

impl FromStr for Method {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| m.to_string() == norm)
            .ok_or_else(|| EvalError::UnknownMethod(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub pipeline: PipelineConfig,
    /// Items evaluated at once.
    pub item_concurrency: usize,
    /// Score answers with the LLM grader as well as EM/F1.
    pub grade_answers: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            item_concurrency: 2,
            grade_answers: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRow {
    pub id: String,
    pub h_at_k: Option<f64>,
    pub p_at_k: Option<f64>,
    pub em: Option<f64>,
    pub f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acc: Option<f64>,
    pub rewrites: Option<usize>,
    pub answer: Option<String>,
    pub judgments: Vec<Judgment>,
    pub flags: Vec<String>,
    pub error: Option<String>,
}

impl ItemRow {
    fn failed(id: &str, error: String) -> Self {
        Self {
            id: id.to_string(),
            h_at_k: None,
            p_at_k: None,
            em: None,
            f1: None,
            acc: None,
            rewrites: None,
            answer: None,
            judgments: Vec::new(),
            flags: Vec::new(),
            error: Some(error),
        }
    }

    pub fn is_scored(&self) -> bool {
        self.error.is_none()
    }
}

/// Means over scored rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub items: usize,
    pub scored: usize,
    pub failed: usize,
    pub h_at_k: f64,
    pub p_at_k: f64,
    pub em: f64,
    pub f1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acc: Option<f64>,
    pub mean_rewrites: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: Method,
    pub judge: JudgeKind,
    pub k: usize,
    pub config: ExperimentConfig,
    pub rows: Vec<ItemRow>,
    pub aggregates: Aggregates,
    /// Rewrite count → number of scored items.
    pub histogram: BTreeMap<usize, usize>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Recompute aggregates and histogram from rows.
pub fn aggregate(rows: &[ItemRow]) -> (Aggregates, BTreeMap<usize, usize>) {
    let scored: Vec<&ItemRow> = rows.iter().filter(|r| r.is_scored()).collect();
    let field = |f: fn(&ItemRow) -> Option<f64>| mean(scored.iter().filter_map(|r| f(r)));
    let graded: Vec<f64> = scored.iter().filter_map(|r| r.acc).collect();
    let mut histogram = BTreeMap::new();
    for r in &scored {
        if let Some(n) = r.rewrites {
            *histogram.entry(n).or_insert(0) += 1;
        }
    }
    let aggregates = Aggregates {
        items: rows.len(),
        scored: scored.len(),
        failed: rows.len() - scored.len(),
        h_at_k: field(|r| r.h_at_k),
        p_at_k: field(|r| r.p_at_k),
        em: field(|r| r.em),
        f1: field(|r| r.f1),
        acc: (!graded.is_empty()).then(|| mean(graded.iter().copied())),
        mean_rewrites: field(|r| r.rewrites.map(|n| n as f64)),
    };
    (aggregates, histogram)
}

impl MetricsReport {
    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<(), EvalError> {
        std::fs::write(path, self.to_json_pretty()).map_err(|source| EvalError::Write {
            path: path.to_path_buf(),
            source,
        })
    }
}

fn evaluate_item(
    engine: &Engine,
    item: &EvalItem,
    plan: &RewritePlan,
    config: &ExperimentConfig,
    pipeline: &PipelineConfig,
    judge: &Judge,
) -> ItemRow {
    let query = match Query::new(item.id.clone(), item.question.clone()) {
        Ok(q) => q,
        Err(e) => return ItemRow::failed(&item.id, e.to_string()),
    };
    let trace = match engine.run(&query, pipeline, plan) {
        Ok(t) => t,
        Err(e) => return ItemRow::failed(&item.id, e.to_string()),
    };
    let mut judgments = Vec::with_capacity(trace.context.len());
    for f in &trace.context {
        match judge_relevance(item, &f.doc, judge) {
            Ok(j) => judgments.push(j),
            Err(e) => return ItemRow::failed(&item.id, format!("judge failed: {e}")),
        }
    }
    let relevant: Vec<bool> = judgments.iter().map(|j| j.relevant).collect();
    let mut flags = trace.flags.clone();
    if judgments.iter().any(|j| j.unparseable) {
        flags.push("judge_unparseable".into());
    }
    let answer = trace.answer.text.clone();
    let (em, f1) = if item.gold_answers.is_empty() {
        (None, None)
    } else {
        (
            Some(exact_match(&answer, &item.gold_answers)),
            Some(f1_token(&answer, &item.gold_answers)),
        )
    };
    let acc = if config.grade_answers && !item.gold_answers.is_empty() {
        match engine.templates.get("judge_answer") {
            Ok(t) => match grade_answer(item, &answer, engine.completer.as_ref(), t) {
                Ok(Some(ok)) => Some(if ok { 1.0 } else { 0.0 }),
                Ok(None) => {
                    flags.push("grade_unparseable".into());
                    Some(0.0)
                }
                Err(e) => return ItemRow::failed(&item.id, format!("answer grading failed: {e}")),
            },
            Err(e) => return ItemRow::failed(&item.id, e.to_string()),
        }
    } else {
        None
    };
    ItemRow {
        id: item.id.clone(),
        h_at_k: Some(hit_at_k(&relevant)),
        p_at_k: Some(precision_at_k(&relevant, pipeline.context_size)),
        em,
        f1,
        acc,
        rewrites: Some(trace.rewrite_count()),
        answer: Some(answer),
        judgments,
        flags,
        error: None,
    }
}

/// Run `method` over every item and build the report. Rows are ordered by
/// item id; failed items become rows with an error and no metrics.
pub fn run_experiment(
    engine: &Engine,
    items: &[EvalItem],
    config: &ExperimentConfig,
    method: Method,
    judge: &Judge,
) -> MetricsReport {
    let (plan, pipeline) = method.configure(&config.pipeline);
    let mut rows = bounded_map(items, config.item_concurrency.max(1), |_, item| {
        evaluate_item(engine, item, &plan, config, &pipeline, judge)
    });
    rows.sort_by(|a, b| a.id.cmp(&b.id));
    let (aggregates, histogram) = aggregate(&rows);
    MetricsReport {
        method,
        judge: judge.kind(),
        k: pipeline.context_size,
        config: config.clone(),
        rows,
        aggregates,
        histogram,
    }
}
