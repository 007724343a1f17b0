mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dmqr_core::model::{RerankerMode, SelectionMode};

use config::{CliConfig, Overrides, RetrieverKind};

/// Exit 1 for bad input data, 2 for configuration or dependency failures.
#[derive(Debug)]
pub enum CliError {
    Data(String),
    Config(String),
    Dependency(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Data(_) => 1,
            CliError::Config(_) | CliError::Dependency(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Data(m) | CliError::Config(m) | CliError::Dependency(m) => m,
        }
    }
}

fn parse_retriever(s: &str) -> Result<RetrieverKind, String> {
    match s.to_ascii_lowercase().as_str() {
        "local" => Ok(RetrieverKind::Local),
        "remote" => Ok(RetrieverKind::Remote),
        _ => Err(format!("expected local or remote, got {s:?}")),
    }
}

fn parse_reranker(s: &str) -> Result<RerankerMode, String> {
    s.parse().map_err(|_| format!("expected rrf, lexical or remote, got {s:?}"))
}

fn parse_selection(s: &str) -> Result<SelectionMode, String> {
    s.parse().map_err(|_| format!("expected all or adaptive, got {s:?}"))
}

#[derive(Parser)]
#[command(name = "dmqr", version, about = "Multi-query rewriting and retrieval for RAG")]
struct Cli {
    /// Flat JSON config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Machine-readable output.
    #[arg(long, global = true)]
    json: bool,
    /// Print the resolved configuration (secrets redacted) and exit.
    #[arg(long, global = true)]
    show_config: bool,
    /// Stream pipeline events to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    /// Scripted completions (JSON object) instead of a live LLM.
    #[arg(long, global = true)]
    mock: Option<PathBuf>,
    /// BM25 index used by the local retriever.
    #[arg(long, global = true)]
    index: Option<PathBuf>,
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Bypass the search response cache.
    #[arg(long, global = true)]
    no_cache: bool,
    /// local or remote.
    #[arg(long, global = true, value_parser = parse_retriever)]
    retriever: Option<RetrieverKind>,
    /// rrf, lexical or remote.
    #[arg(long, global = true, value_parser = parse_reranker)]
    reranker: Option<RerankerMode>,
    #[arg(long, global = true)]
    rerank_url: Option<String>,
    /// all or adaptive.
    #[arg(long, global = true, value_parser = parse_selection)]
    selection: Option<SelectionMode>,
    /// oqr, rewrite, hyde, rag_fusion, dmqr, dmqr_adaptive (eval also accepts all).
    #[arg(long, global = true)]
    method: Option<String>,
    /// Write the pipeline trace as JSON.
    #[arg(long, global = true)]
    trace_out: Option<PathBuf>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Build a BM25 index from a JSON Lines corpus.
    Index {
        corpus: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Show the rewrites produced for a query.
    Rewrite {
        query: String,
        /// Comma-separated strategy ids.
        #[arg(long, value_delimiter = ',')]
        strategies: Vec<String>,
        /// Let the model pick strategies first.
        #[arg(long)]
        adaptive: bool,
    },
    /// Answer a question with retrieval.
    Ask { query: String },
    /// Run an evaluation over a dataset.
    Eval {
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// gold or llm; defaults to gold for the local retriever.
        #[arg(long)]
        judge: Option<String>,
        /// Also grade answers with the LLM.
        #[arg(long)]
        grade_answers: bool,
    },
    /// Inspect or empty the search cache.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
}

#[derive(Subcommand, Clone, Copy)]
enum CacheAction {
    Stats,
    Clear,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let overrides = Overrides {
        cache_dir: cli.cache_dir,
        no_cache: cli.no_cache,
        index: cli.index,
        mock: cli.mock,
        retriever: cli.retriever,
        reranker: cli.reranker,
        selection: cli.selection,
        method: cli.method,
        rerank_url: cli.rerank_url,
    };
    let config = CliConfig::resolve(cli.config.as_deref(), overrides)?;
    if cli.show_config {
        println!("{}", serde_json::to_string_pretty(&config.redacted()).expect("json"));
        return Ok(());
    }
    let ctx = commands::Context {
        config,
        json: cli.json,
        verbose: cli.verbose,
    };
    match cli.command {
        None => Err(CliError::Config("no command given; see --help".into())),
        Some(Command::Index { corpus, out }) => commands::index(&ctx, &corpus, out),
        Some(Command::Rewrite {
            query,
            strategies,
            adaptive,
        }) => commands::rewrite(&ctx, &query, &strategies, adaptive),
        Some(Command::Ask { query }) => commands::ask(&ctx, &query, cli.trace_out.as_deref()),
        Some(Command::Eval {
            dataset,
            out,
            judge,
            grade_answers,
        }) => commands::eval(&ctx, &dataset, out, judge.as_deref(), grade_answers),
        Some(Command::Cache { action }) => commands::cache(&ctx, matches!(action, CacheAction::Clear)),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
