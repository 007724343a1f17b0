//! End-to-end orchestration: selection, rewriting, fan-out retrieval,
//! dedup and reranking, top-K context and answer generation.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fanout::bounded_map;
use crate::llm::{ChatRequest, Completer, LlmError};
use crate::model::{
    build_query_set, DocumentKey, ModelError, PipelineConfig, Query, QuerySet, QuerySource,
    RankedList, RerankerMode, SelectionMode, StrategyId,
};
use crate::ranking::{
    deduplicate, lexical_rerank, remote_rerank, rrf_from_candidates, top_k, FusedDoc,
    RerankClient,
};
use crate::retrieval::{CacheStatus, ResponseCache, Retriever};
use crate::rewriting::{
    rewrite_fusion_variants, rewrite_or_fallback, truncate_at_whitespace, RewriteError,
    RewriteOutcome, StrategyPool,
};
use crate::selection::{builtin_demonstrations, select_strategies, Demonstration, SelectionResult};
use crate::template::{TemplateError, TemplateSet};
use crate::trace::{diversity_from_members, DiversityStats, EventSink, Level, StageTiming, Stopwatch, TraceEvent};

/// Sampling temperature for the answer call.
pub const ANSWER_TEMPERATURE: f32 = 0.2;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid query: {0}")]
    Query(ModelError),
    #[error(transparent)]
    Config(ModelError),
    #[error("strategy {0} is not registered")]
    UnknownStrategy(StrategyId),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("answer generation failed: {0}")]
    Answer(LlmError),
}

/// Which queries are sent to the retriever.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewritePlan {
    /// The original query plus one rewrite per strategy. With adaptive
    /// selection the strategies are a per-query subset of this list.
    MultiQuery {
        strategies: Vec<StrategyId>,
        selection: SelectionMode,
    },
    /// Retrieve with a single rewrite in place of the original query.
    SingleRewrite { strategy: StrategyId },
    /// The original query plus `count` paraphrases from one batched call.
    FusionVariants { count: usize },
}

impl RewritePlan {
    /// The four diverse strategies under the given selection mode.
    pub fn dmqr(selection: SelectionMode) -> Self {
        RewritePlan::MultiQuery {
            strategies: StrategyId::DMQR.to_vec(),
            selection,
        }
    }

    /// Original-query retrieval.
    pub fn original_only() -> Self {
        RewritePlan::MultiQuery {
            strategies: Vec::new(),
            selection: SelectionMode::FixedAll,
        }
    }

    fn max_queries(&self) -> usize {
        match self {
            RewritePlan::MultiQuery { strategies, .. } => strategies.len(),
            RewritePlan::SingleRewrite { .. } => 1,
            RewritePlan::FusionVariants { count } => *count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RetrievalStatus {
    Ok,
    Failed { error: String },
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRecord {
    pub source: QuerySource,
    pub query: String,
    #[serde(flatten)]
    pub status: RetrievalStatus,
    pub cache: Option<CacheStatus>,
    pub list: RankedList,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CacheCounts {
    pub hits: usize,
    pub misses: usize,
    pub degraded: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionSummary {
    pub requested: usize,
    pub parsed: usize,
    pub shortfall: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    /// Keys of the documents given to the answer model, in prompt order.
    pub context_keys: Vec<DocumentKey>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub query: Query,
    pub plan: RewritePlan,
    pub config: PipelineConfig,
    pub selection: Option<SelectionResult>,
    pub rewrites: Vec<RewriteOutcome>,
    pub fusion: Option<FusionSummary>,
    pub query_set: QuerySet,
    pub retrievals: Vec<RetrievalRecord>,
    pub retrieval_calls: usize,
    pub candidates_before_dedup: usize,
    pub dedup_survivors: usize,
    pub reranker: RerankerMode,
    pub rerank_fallback: bool,
    pub fused: Vec<FusedDoc>,
    pub context: Vec<FusedDoc>,
    pub answer: Answer,
    pub diversity: DiversityStats,
    pub flags: Vec<String>,
    pub cache: CacheCounts,
    pub llm_retries: u32,
    pub events: Vec<TraceEvent>,
    /// Wall-clock measurements; the only nondeterministic field.
    pub timings: Vec<StageTiming>,
}

impl PipelineTrace {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("trace serializes")
    }

    /// JSON without `timings`, for reproducibility comparisons.
    pub fn deterministic_json(&self) -> serde_json::Value {
        let mut v = self.to_json();
        if let Some(obj) = v.as_object_mut() {
            obj.remove("timings");
        }
        v
    }

    /// Every retrieved document, before dedup.
    pub fn retrieved_keys(&self) -> Vec<DocumentKey> {
        self.retrievals
            .iter()
            .flat_map(|r| r.list.docs.iter().map(|d| d.key.clone()))
            .collect()
    }

    /// Number of rewrites that reached the query set.
    pub fn rewrite_count(&self) -> usize {
        self.query_set.rewrites.len()
    }
}

/// Question followed by numbered documents, each cut to `char_budget`
/// characters at a word boundary.
pub fn assemble_context(query: &Query, docs: &[FusedDoc], k: usize, char_budget: usize) -> String {
    let mut out = format!("Question: {}\n\nDocuments:\n", query.text.trim());
    let docs = &docs[..k.min(docs.len())];
    if docs.is_empty() {
        out.push_str("(no documents retrieved)\n");
        return out;
    }
    for (i, f) in docs.iter().enumerate() {
        let (content, _) = truncate_at_whitespace(f.doc.content.trim(), char_budget);
        out.push_str(&format!("[{}] {}\n{}\n\n", i + 1, f.doc.title.trim(), content));
    }
    out.truncate(out.trim_end().len());
    out.push('\n');
    out
}

/// Wired dependencies plus the strategy registry and prompt data.
pub struct Engine {
    pub completer: Arc<dyn Completer>,
    pub retriever: Arc<dyn Retriever>,
    pub cache: Option<ResponseCache>,
    pub rerank_client: Option<Arc<dyn RerankClient>>,
    pub templates: TemplateSet,
    pub pool: StrategyPool,
    pub demonstrations: Vec<Demonstration>,
    pub verbose: bool,
}

struct Target {
    source: QuerySource,
    text: String,
}

impl Engine {
    pub fn new(completer: Arc<dyn Completer>, retriever: Arc<dyn Retriever>) -> Self {
        let templates = TemplateSet::builtin();
        Self {
            completer,
            retriever,
            cache: None,
            rerank_client: None,
            pool: StrategyPool::builtin(&templates),
            templates,
            demonstrations: builtin_demonstrations(),
            verbose: false,
        }
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_rerank_client(mut self, client: Arc<dyn RerankClient>) -> Self {
        self.rerank_client = Some(client);
        self
    }

    /// Replace templates; built-in strategies pick up the new bodies.
    pub fn with_templates(mut self, templates: TemplateSet) -> Self {
        let mut pool = StrategyPool::builtin(&templates);
        for d in self.pool.descriptors() {
            if pool.get(&d.id).is_none() {
                let _ = pool.register(d.clone());
            }
        }
        self.pool = pool;
        self.templates = templates;
        self
    }

    pub fn with_demonstrations(mut self, demos: Vec<Demonstration>) -> Self {
        self.demonstrations = demos;
        self
    }

    pub fn with_verbose(mut self, verbose: bool) -> Self {
        self.verbose = verbose;
        self
    }

    fn retrieve(&self, text: &str, limit: usize) -> (Result<RankedList, String>, Option<CacheStatus>) {
        match &self.cache {
            Some(cache) => {
                let (r, status) = cache.cached_search(self.retriever.as_ref(), text, limit);
                (r.map_err(|e| e.to_string()), Some(status))
            }
            None => (
                self.retriever.search(text, limit).map_err(|e| e.to_string()),
                None,
            ),
        }
    }

    pub fn run(
        &self,
        query: &Query,
        config: &PipelineConfig,
        plan: &RewritePlan,
    ) -> Result<PipelineTrace, PipelineError> {
        query.validate().map_err(PipelineError::Query)?;
        config
            .validate(plan.max_queries())
            .map_err(PipelineError::Config)?;
        let clock = Stopwatch::new();
        let sink = EventSink::new(self.verbose);
        let mut flags: Vec<String> = Vec::new();
        let mut llm_retries = 0u32;

        // strategy choice
        let mut selection = None;
        let chosen: Vec<StrategyId> = match plan {
            RewritePlan::MultiQuery {
                strategies,
                selection: mode,
            } => {
                let sub = self
                    .pool
                    .subset(strategies)
                    .map_err(|e| match e {
                        RewriteError::UnknownStrategy(id) => PipelineError::UnknownStrategy(id),
                        other => PipelineError::UnknownStrategy(StrategyId::Custom(other.to_string())),
                    })?;
                if *mode == SelectionMode::Adaptive && !sub.is_empty() {
                    let template = self.templates.get("select")?;
                    let outcome = clock.time("select", || {
                        select_strategies(template, query, &sub, &self.demonstrations, self.completer.as_ref())
                    });
                    match outcome {
                        Ok(result) => {
                            if result.fallback_used {
                                flags.push("selection_fallback".into());
                            }
                            let ids = result.chosen.clone();
                            selection = Some(result);
                            ids
                        }
                        Err(e) => {
                            flags.push("selection_failed".into());
                            sink.emit(Level::Warn, "select", format!("selection failed, using all strategies: {e}"));
                            sub.ids()
                        }
                    }
                } else {
                    sub.ids()
                }
            }
            RewritePlan::SingleRewrite { strategy } => {
                if self.pool.get(strategy).is_none() {
                    return Err(PipelineError::UnknownStrategy(strategy.clone()));
                }
                vec![strategy.clone()]
            }
            RewritePlan::FusionVariants { .. } => Vec::new(),
        };

        // rewriting
        let mut fusion = None;
        let rewrites: Vec<RewriteOutcome> = match plan {
            RewritePlan::FusionVariants { count } => {
                let result = clock.time("rewrite", || {
                    rewrite_fusion_variants(&self.templates, query, *count, self.completer.as_ref())
                });
                match result {
                    Ok(out) => {
                        llm_retries += out.retries;
                        if out.shortfall > 0 {
                            flags.push(format!("fusion_shortfall:{}", out.shortfall));
                        }
                        if out.truncated > 0 {
                            flags.push(format!("fusion_truncated:{}", out.truncated));
                        }
                        fusion = Some(FusionSummary {
                            requested: out.requested,
                            parsed: out.variants.len(),
                            shortfall: out.shortfall,
                        });
                        out.variants
                            .into_iter()
                            .map(|rewrite| RewriteOutcome {
                                rewrite,
                                fallback: false,
                                truncated: false,
                                retries: 0,
                                error: None,
                            })
                            .collect()
                    }
                    Err(e) => {
                        flags.push("fusion_failed".into());
                        sink.emit(Level::Warn, "rewrite", format!("fusion rewriting failed: {e}"));
                        fusion = Some(FusionSummary {
                            requested: *count,
                            parsed: 0,
                            shortfall: *count,
                        });
                        Vec::new()
                    }
                }
            }
            _ => {
                let start = Instant::now();
                let outcomes = bounded_map(&chosen, config.concurrency_bound, |_, id| {
                    rewrite_or_fallback(&self.pool, id, query, self.completer.as_ref())
                });
                clock.record("rewrite", start, Instant::now());
                outcomes
            }
        };
        for o in &rewrites {
            llm_retries += o.retries;
            let id = &o.rewrite.strategy;
            if o.fallback {
                flags.push(format!("rewrite_fallback:{id}"));
                sink.emit(
                    Level::Warn,
                    "rewrite",
                    format!("{id} fell back to the original query: {}", o.error.as_deref().unwrap_or("")),
                );
            }
            if o.truncated {
                flags.push(format!("rewrite_truncated:{id}"));
            }
        }
        let query_set = build_query_set(
            query.clone(),
            rewrites.iter().map(|o| o.rewrite.clone()).collect(),
        )
        .map_err(PipelineError::Query)?;

        // retrieval fan-out
        let targets: Vec<Target> = match plan {
            RewritePlan::SingleRewrite { .. } => query_set
                .members()
                .skip(1)
                .map(|(source, text)| Target { source, text: text.to_string() })
                .collect(),
            _ => query_set
                .members()
                .map(|(source, text)| Target { source, text: text.to_string() })
                .collect(),
        };
        let budget = config.retrieval_budget.unwrap_or(usize::MAX);
        let fanout_start = Instant::now();
        let records: Vec<RetrievalRecord> = bounded_map(&targets, config.concurrency_bound, |i, t| {
            if i >= budget {
                return RetrievalRecord {
                    source: t.source.clone(),
                    query: t.text.clone(),
                    status: RetrievalStatus::Skipped,
                    cache: None,
                    list: RankedList::empty(&t.text),
                };
            }
            let start = Instant::now();
            let (result, cache) = self.retrieve(&t.text, config.per_query_limit);
            clock.record(format!("retrieve[{i}]:{}", t.source), start, Instant::now());
            match result {
                Ok(list) => RetrievalRecord {
                    source: t.source.clone(),
                    query: t.text.clone(),
                    status: RetrievalStatus::Ok,
                    cache,
                    list: list.with_source(&t.source),
                },
                Err(error) => RetrievalRecord {
                    source: t.source.clone(),
                    query: t.text.clone(),
                    status: RetrievalStatus::Failed { error },
                    cache,
                    list: RankedList::empty(&t.text),
                },
            }
        });
        clock.record("retrieve", fanout_start, Instant::now());

        let mut cache_counts = CacheCounts::default();
        for r in &records {
            match r.cache {
                Some(CacheStatus::Hit) => cache_counts.hits += 1,
                Some(CacheStatus::Miss) => cache_counts.misses += 1,
                Some(CacheStatus::Degraded) => cache_counts.degraded += 1,
                None => {}
            }
            match &r.status {
                RetrievalStatus::Failed { error } => {
                    flags.push(format!("retrieval_failed:{}", r.source));
                    sink.emit(Level::Warn, "retrieve", format!("{} retrieval failed: {error}", r.source));
                }
                RetrievalStatus::Skipped => {
                    flags.push(format!("retrieval_skipped:{}", r.source));
                    sink.emit(Level::Warn, "retrieve", format!("{} skipped: retrieval budget reached", r.source));
                }
                RetrievalStatus::Ok => {}
            }
        }
        if cache_counts.degraded > 0 {
            flags.push("cache_degraded".into());
        }
        let retrieval_calls = records
            .iter()
            .filter(|r| r.status != RetrievalStatus::Skipped)
            .count();
        let lists: Vec<RankedList> = records.iter().map(|r| r.list.clone()).collect();
        let candidates_before_dedup = lists.iter().map(RankedList::len).sum();

        // dedup + rerank
        let rerank_start = Instant::now();
        let candidates = deduplicate(&lists);
        let mut rerank_fallback = false;
        let fused = match config.reranker_mode {
            RerankerMode::Rrf => rrf_from_candidates(&candidates, config.rrf_constant),
            RerankerMode::Lexical => lexical_rerank(query, &candidates),
            RerankerMode::Remote => match &self.rerank_client {
                Some(client) => {
                    let out = remote_rerank(query, &candidates, client.as_ref(), config.rrf_constant);
                    if out.fallback {
                        rerank_fallback = true;
                        sink.emit(
                            Level::Warn,
                            "rerank",
                            format!("remote reranker failed, using RRF: {}", out.error.as_deref().unwrap_or("")),
                        );
                    }
                    out.ranked
                }
                None => {
                    rerank_fallback = true;
                    sink.emit(Level::Warn, "rerank", "no remote reranker configured, using RRF");
                    rrf_from_candidates(&candidates, config.rrf_constant)
                }
            },
        };
        if rerank_fallback {
            flags.push("rerank_fallback".into());
        }
        let context = top_k(&fused, config.context_size);
        clock.record("rerank", rerank_start, Instant::now());

        // answer
        let prompt_context = assemble_context(query, &context, config.context_size, config.context_char_budget);
        let bindings = HashMap::from([("context", prompt_context.as_str()), ("query", query.text.as_str())]);
        let request = ChatRequest::new(self.templates.get("answer")?.render(&bindings)?)
            .with_temperature(ANSWER_TEMPERATURE);
        let response = clock
            .time("answer", || self.completer.complete(&request))
            .map_err(PipelineError::Answer)?;
        llm_retries += response.retries;
        let answer = Answer {
            text: response.text.trim().to_string(),
            context_keys: context.iter().map(|f| f.doc.key.clone()).collect(),
        };

        let members: Vec<(QuerySource, String)> =
            targets.iter().map(|t| (t.source.clone(), t.text.clone())).collect();
        let diversity = diversity_from_members(&members, &lists);

        Ok(PipelineTrace {
            query: query.clone(),
            plan: plan.clone(),
            config: config.clone(),
            selection,
            rewrites,
            fusion,
            query_set,
            retrieval_calls,
            candidates_before_dedup,
            dedup_survivors: candidates.len(),
            retrievals: records,
            reranker: config.reranker_mode,
            rerank_fallback,
            fused,
            context,
            answer,
            diversity,
            flags,
            cache: cache_counts,
            llm_retries,
            events: sink.snapshot(),
            timings: clock.finish(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Document;
    use crate::ranking::Contribution;

    fn fused(title: &str, content: &str) -> FusedDoc {
        FusedDoc {
            doc: Document::new(title, content, None).unwrap(),
            fused_score: 1.0,
            contributing: vec![Contribution {
                query: "q".into(),
                source: QuerySource::Original,
                rank: 1,
            }],
        }
    }

    #[test]
    fn context_takes_first_k_in_order() {
        let q = Query::new("q", "what?").unwrap();
        let docs = [fused("d1", "one"), fused("d2", "two"), fused("d3", "three")];
        let ctx = assemble_context(&q, &docs, 2, 100);
        assert!(ctx.starts_with("Question: what?"));
        let p1 = ctx.find("[1] d1").unwrap();
        let p2 = ctx.find("[2] d2").unwrap();
        assert!(p1 < p2);
        assert!(!ctx.contains("d3"));
    }

    #[test]
    fn context_without_documents() {
        let q = Query::new("q", "what?").unwrap();
        let ctx = assemble_context(&q, &[], 5, 100);
        assert!(ctx.contains("what?"));
        assert!(ctx.contains("no documents retrieved"));
    }

    #[test]
    fn context_truncates_long_content() {
        let q = Query::new("q", "what?").unwrap();
        let long = "word ".repeat(100);
        let ctx = assemble_context(&q, &[fused("d", &long)], 1, 42);
        let body = ctx.lines().nth(4).unwrap();
        assert!(body.chars().count() <= 42);
        assert!(body.ends_with("word"));
    }
}
