use std::path::{Path, PathBuf};
use std::sync::Arc;

use dmqr_core::evaluation::{load_dataset, run_experiment, ExperimentConfig, Judge, Method, MetricsReport};
use dmqr_core::llm::{Completer, HttpCompleter, HttpCompleterConfig, LlmError, ScriptedCompleter};
use dmqr_core::model::{DocumentKey, Query, SelectionMode, StrategyId};
use dmqr_core::pipeline::Engine;
use dmqr_core::ranking::HttpRerankClient;
use dmqr_core::retrieval::{
    read_corpus_jsonl, Bm25Index, LocalRetriever, RemoteSearch, RemoteSearchConfig, ResponseCache,
    RetrievalError, Retriever,
};
use dmqr_core::rewriting::{self, RewriteError, StrategyPool};
use dmqr_core::selection::{load_demonstrations, select_strategies, SelectionError};
use dmqr_core::template::TemplateSet;
use serde_json::json;

use crate::config::{CliConfig, RetrieverKind};
use crate::CliError;

pub struct Context {
    pub config: CliConfig,
    pub json: bool,
    pub verbose: bool,
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json"));
}

fn llm_error(e: LlmError) -> CliError {
    CliError::Dependency(format!("language model: {e}"))
}

fn completer(config: &CliConfig) -> Result<Arc<dyn Completer>, CliError> {
    if let Some(path) = &config.mock {
        return ScriptedCompleter::from_file(path)
            .map(|m| Arc::new(m) as Arc<dyn Completer>)
            .map_err(|e| CliError::Config(e.to_string()));
    }
    let url = config.llm_url.clone().ok_or_else(|| {
        CliError::Config("no language model configured: set DMQR_LLM_URL or pass --mock".into())
    })?;
    let mut http = HttpCompleterConfig::new(url, config.llm_model.clone());
    http.api_key = config.llm_key.clone();
    http.requests_per_second = config.requests_per_second;
    Ok(Arc::new(HttpCompleter::new(http)))
}

fn templates(config: &CliConfig) -> Result<TemplateSet, CliError> {
    match &config.templates {
        Some(dir) => TemplateSet::load_dir(dir).map_err(|e| CliError::Config(e.to_string())),
        None => Ok(TemplateSet::builtin()),
    }
}

struct Wired {
    engine: Engine,
    key_to_ids: Option<std::collections::BTreeMap<DocumentKey, Vec<String>>>,
}

fn retrieval_error(e: RetrievalError) -> CliError {
    CliError::Dependency(e.to_string())
}

fn wire(ctx: &Context) -> Result<Wired, CliError> {
    let config = &ctx.config;
    let completer = completer(config)?;
    let (retriever, key_to_ids): (Arc<dyn Retriever>, _) = match config.retriever {
        RetrieverKind::Local => {
            let local = LocalRetriever::open(&config.index).map_err(retrieval_error)?;
            let map = local.key_to_ids();
            (Arc::new(local), Some(map))
        }
        RetrieverKind::Remote => {
            let url = config.search_url.clone().ok_or_else(|| {
                CliError::Config("remote retriever needs DMQR_SEARCH_URL".into())
            })?;
            let mut search = RemoteSearchConfig::new(url);
            search.api_key = config.search_key.clone();
            search.requests_per_second = config.requests_per_second;
            (Arc::new(RemoteSearch::new(search)), None)
        }
    };
    let mut engine = Engine::new(completer, retriever)
        .with_templates(templates(config)?)
        .with_verbose(ctx.verbose);
    if let Some(path) = &config.demonstrations {
        let demos = load_demonstrations(path).map_err(|e| CliError::Config(e.to_string()))?;
        engine = engine.with_demonstrations(demos);
    }
    if let Some(dir) = &config.cache_dir {
        engine = engine.with_cache(ResponseCache::new(dir));
    }
    if let Some(url) = &config.rerank_url {
        engine = engine.with_rerank_client(Arc::new(HttpRerankClient::new(
            url.clone(),
            config.rerank_key.clone(),
        )));
    }
    Ok(Wired { engine, key_to_ids })
}

pub fn index(ctx: &Context, corpus: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let out = out.unwrap_or_else(|| ctx.config.index.clone());
    let docs = read_corpus_jsonl(corpus).map_err(|e| CliError::Data(e.to_string()))?;
    let index = Bm25Index::build(docs).map_err(|e| CliError::Data(e.to_string()))?;
    index.save(&out).map_err(|e| CliError::Data(e.to_string()))?;
    if ctx.json {
        print_json(&json!({
            "documents": index.len(),
            "vocabulary": index.vocabulary_size(),
            "avg_len": index.avg_len(),
            "out": out,
        }));
    } else {
        println!(
            "indexed N={} documents, vocabulary={}, avglen={:.2} -> {}",
            index.len(),
            index.vocabulary_size(),
            index.avg_len(),
            out.display()
        );
    }
    Ok(())
}

fn parse_strategies(names: &[String], pool: &StrategyPool) -> Result<Vec<StrategyId>, CliError> {
    let valid = || {
        pool.ids()
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(", ")
    };
    if names.is_empty() {
        return Ok(StrategyId::DMQR.to_vec());
    }
    names
        .iter()
        .map(|n| {
            n.parse::<StrategyId>()
                .ok()
                .filter(|id| pool.get(id).is_some())
                .ok_or_else(|| {
                    CliError::Config(format!("unknown strategy {n:?}; valid ids: {}", valid()))
                })
        })
        .collect()
}

pub fn rewrite(ctx: &Context, query: &str, names: &[String], adaptive: bool) -> Result<(), CliError> {
    let templates = templates(&ctx.config)?;
    let pool = StrategyPool::builtin(&templates);
    let ids = parse_strategies(names, &pool)?;
    let query = Query::new("cli", query).map_err(|e| CliError::Data(e.to_string()))?;
    let completer = completer(&ctx.config)?;
    let sub = pool
        .subset(&ids)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let selection = if adaptive {
        let demos = match &ctx.config.demonstrations {
            Some(p) => load_demonstrations(p).map_err(|e| CliError::Config(e.to_string()))?,
            None => dmqr_core::selection::builtin_demonstrations(),
        };
        let template = templates
            .get("select")
            .map_err(|e| CliError::Config(e.to_string()))?;
        let result = select_strategies(template, &query, &sub, &demos, completer.as_ref())
            .map_err(|e| match e {
                SelectionError::Llm(e) => llm_error(e),
                other => CliError::Config(other.to_string()),
            })?;
        Some(result)
    } else {
        None
    };
    let chosen = selection.as_ref().map_or(ids.clone(), |s| s.chosen.clone());
    let mut rows = Vec::new();
    for id in &chosen {
        let row = match rewriting::rewrite(&sub, id, &query, completer.as_ref()) {
            Ok(r) => json!({"strategy": id, "text": r.text, "fallback": false}),
            Err(RewriteError::Llm(e)) => return Err(llm_error(e)),
            Err(e) => json!({"strategy": id, "text": query.text, "fallback": true, "error": e.to_string()}),
        };
        rows.push(row);
    }
    if ctx.json {
        print_json(&json!({"query": query.text, "selection": selection, "rewrites": rows}));
        return Ok(());
    }
    if let Some(sel) = &selection {
        let names: Vec<String> = sel.chosen.iter().map(ToString::to_string).collect();
        println!("selection: {}", names.join(", "));
        if sel.fallback_used {
            println!("  (selector output unparseable; using every strategy)");
        }
    }
    for row in &rows {
        let tag = row["strategy"].as_str().unwrap_or_default();
        let text = row["text"].as_str().unwrap_or_default();
        if row["fallback"] == true {
            println!("[{tag}] {text}  (fallback: {})", row["error"].as_str().unwrap_or_default());
        } else {
            println!("[{tag}] {text}");
        }
    }
    Ok(())
}

fn method_for(ctx: &Context, default: Method) -> Result<Method, CliError> {
    let method = match &ctx.config.method {
        Some(m) => m.parse().map_err(|e: dmqr_core::evaluation::EvalError| CliError::Config(e.to_string()))?,
        None => default,
    };
    Ok(match method {
        Method::Dmqr if ctx.config.pipeline.selection_mode == SelectionMode::Adaptive => Method::DmqrAdaptive,
        m => m,
    })
}

pub fn ask(ctx: &Context, question: &str, trace_out: Option<&Path>) -> Result<(), CliError> {
    let query = Query::new("cli", question).map_err(|e| CliError::Data(e.to_string()))?;
    let method = method_for(ctx, Method::Dmqr)?;
    let wired = wire(ctx)?;
    let (plan, config) = method.configure(&ctx.config.pipeline);
    let trace = wired
        .engine
        .run(&query, &config, &plan)
        .map_err(|e| CliError::Dependency(format!("pipeline failed: {e}")))?;
    if let Some(path) = trace_out {
        let text = serde_json::to_string_pretty(&trace.to_json()).expect("json") + "\n";
        std::fs::write(path, text)
            .map_err(|e| CliError::Data(format!("cannot write trace to {}: {e}", path.display())))?;
    }
    for flag in &trace.flags {
        eprintln!("warning: {flag}");
    }
    if ctx.json {
        let context: Vec<_> = trace
            .context
            .iter()
            .map(|f| json!({"key": f.doc.key, "title": f.doc.title, "url": f.doc.url}))
            .collect();
        print_json(&json!({
            "query": query.text,
            "method": method,
            "answer": trace.answer.text,
            "context": context,
            "retrieval_calls": trace.retrieval_calls,
            "flags": trace.flags,
        }));
    } else {
        println!("{}", trace.answer.text);
        if !trace.context.is_empty() {
            println!("\nSources:");
            for (i, f) in trace.context.iter().enumerate() {
                let label = if f.doc.title.is_empty() {
                    f.doc.url.clone().unwrap_or_else(|| f.doc.key.to_string())
                } else {
                    f.doc.title.clone()
                };
                println!("[{}] {label}", i + 1);
            }
        }
    }
    Ok(())
}

pub fn eval(
    ctx: &Context,
    dataset: &Path,
    out: Option<PathBuf>,
    judge: Option<&str>,
    grade_answers: bool,
) -> Result<(), CliError> {
    let items = load_dataset(dataset).map_err(|e| CliError::Data(e.to_string()))?;
    let methods: Vec<Method> = match ctx.config.method.as_deref() {
        Some(m) if m.eq_ignore_ascii_case("all") => Method::ALL.to_vec(),
        _ => vec![method_for(ctx, Method::Dmqr)?],
    };
    let wired = wire(ctx)?;
    let judge = match (judge, wired.key_to_ids) {
        (Some("llm"), _) | (None, None) => {
            Judge::llm(Arc::clone(&wired.engine.completer), &wired.engine.templates)
                .map_err(|e| CliError::Config(e.to_string()))?
        }
        (Some("gold") | None, Some(map)) => Judge::gold_labels(map),
        (Some("gold"), None) => {
            return Err(CliError::Config("gold-label judging needs the local retriever".into()))
        }
        (Some(other), _) => {
            return Err(CliError::Config(format!("unknown judge {other:?}; expected gold or llm")))
        }
    };
    let config = ExperimentConfig {
        pipeline: ctx.config.pipeline.clone(),
        item_concurrency: ctx.config.item_concurrency,
        grade_answers,
    };
    let reports: Vec<MetricsReport> = methods
        .iter()
        .map(|&m| run_experiment(&wired.engine, &items, &config, m, &judge))
        .collect();
    let out = out.unwrap_or_else(|| PathBuf::from("dmqr-report.json"));
    let body = if reports.len() == 1 {
        reports[0].to_json_pretty()
    } else {
        serde_json::to_string_pretty(&reports).expect("json") + "\n"
    };
    std::fs::write(&out, body)
        .map_err(|e| CliError::Data(format!("cannot write report to {}: {e}", out.display())))?;
    if ctx.json {
        let rows: Vec<_> = reports
            .iter()
            .map(|r| json!({"method": r.method, "aggregates": r.aggregates, "histogram": r.histogram}))
            .collect();
        print_json(&json!({"report": out, "methods": rows}));
        return Ok(());
    }
    let k = ctx.config.pipeline.context_size;
    println!(
        "{:<14} {:>7} {:>7} {:>7} {:>7} {:>9} {:>7}",
        "method",
        format!("H@{k}"),
        format!("P@{k}"),
        "EM",
        "F1",
        "rewrites",
        "failed"
    );
    for r in &reports {
        let a = &r.aggregates;
        println!(
            "{:<14} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>9.3} {:>7}",
            r.method.to_string(),
            a.h_at_k,
            a.p_at_k,
            a.em,
            a.f1,
            a.mean_rewrites,
            a.failed
        );
    }
    println!("report written to {}", out.display());
    Ok(())
}

pub fn cache(ctx: &Context, clear: bool) -> Result<(), CliError> {
    let dir = ctx
        .config
        .cache_dir
        .clone()
        .ok_or_else(|| CliError::Config("cache is disabled".into()))?;
    let cache = ResponseCache::new(&dir);
    if clear {
        let removed = cache
            .clear()
            .map_err(|e| CliError::Data(format!("cannot clear {}: {e}", dir.display())))?;
        if ctx.json {
            print_json(&json!({"dir": dir, "removed": removed}));
        } else {
            println!("removed {removed} entries from {}", dir.display());
        }
    } else {
        let stats = cache.stats();
        if ctx.json {
            print_json(&json!({"dir": dir, "entries": stats.entries, "bytes": stats.bytes}));
        } else {
            println!("{}: {} entries, {} bytes", dir.display(), stats.entries, stats.bytes);
        }
    }
    Ok(())
}
