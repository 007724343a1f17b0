use std::path::{Path, PathBuf};

use dmqr_core::model::{PipelineConfig, RerankerMode, SelectionMode};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RetrieverKind {
    #[default]
    Local,
    Remote,
}

/// Flat key/value config file. Every key is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub llm_url: Option<String>,
    pub llm_key: Option<String>,
    pub llm_model: Option<String>,
    pub search_url: Option<String>,
    pub search_key: Option<String>,
    pub rerank_url: Option<String>,
    pub rerank_key: Option<String>,
    pub cache_dir: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub mock: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub demonstrations: Option<PathBuf>,
    pub retriever: Option<RetrieverKind>,
    pub reranker: Option<RerankerMode>,
    pub selection: Option<SelectionMode>,
    pub method: Option<String>,
    pub per_query_limit: Option<usize>,
    pub context_size: Option<usize>,
    pub rrf_constant: Option<u32>,
    pub concurrency: Option<usize>,
    pub context_char_budget: Option<usize>,
    pub fusion_variants: Option<usize>,
    pub retrieval_budget: Option<usize>,
    pub item_concurrency: Option<usize>,
    pub requests_per_second: Option<f64>,
}

/// Values that can be set from the command line.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub cache_dir: Option<PathBuf>,
    pub no_cache: bool,
    pub index: Option<PathBuf>,
    pub mock: Option<PathBuf>,
    pub retriever: Option<RetrieverKind>,
    pub reranker: Option<RerankerMode>,
    pub selection: Option<SelectionMode>,
    pub method: Option<String>,
    pub rerank_url: Option<String>,
}

/// Fully resolved settings: flags > environment > file > defaults.
#[derive(Debug, Clone, Serialize)]
pub struct CliConfig {
    pub config_file: Option<PathBuf>,
    pub llm_url: Option<String>,
    pub llm_key: Option<String>,
    pub llm_model: String,
    pub search_url: Option<String>,
    pub search_key: Option<String>,
    pub rerank_url: Option<String>,
    pub rerank_key: Option<String>,
    pub cache_dir: Option<PathBuf>,
    pub index: PathBuf,
    pub mock: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub demonstrations: Option<PathBuf>,
    pub retriever: RetrieverKind,
    pub method: Option<String>,
    pub pipeline: PipelineConfig,
    pub item_concurrency: usize,
    pub requests_per_second: Option<f64>,
}

pub const DEFAULT_INDEX: &str = "dmqr-index.json";
pub const DEFAULT_CACHE_DIR: &str = ".dmqr-cache";

/// `--config`, else `$HOME/.config/dmqr/config.json` when it exists.
fn config_path(explicit: Option<&Path>) -> Option<PathBuf> {
    if let Some(p) = explicit {
        return Some(p.to_path_buf());
    }
    let home = std::env::var_os("HOME")?;
    let p = Path::new(&home).join(".config/dmqr/config.json");
    p.exists().then_some(p)
}

fn read_file(path: &Path) -> Result<FileConfig, CliError> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&raw)
        .map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))
}

fn env(name: &str) -> Option<String> {
    std::env::var(name).ok().filter(|v| !v.is_empty())
}

impl CliConfig {
    pub fn resolve(explicit: Option<&Path>, flags: Overrides) -> Result<Self, CliError> {
        let config_file = config_path(explicit);
        let file = match &config_file {
            Some(p) => read_file(p)?,
            None => FileConfig::default(),
        };
        let defaults = PipelineConfig::default();
        let pipeline = PipelineConfig {
            per_query_limit: file.per_query_limit.unwrap_or(defaults.per_query_limit),
            context_size: file.context_size.unwrap_or(defaults.context_size),
            rrf_constant: file.rrf_constant.unwrap_or(defaults.rrf_constant),
            concurrency_bound: file.concurrency.unwrap_or(defaults.concurrency_bound),
            selection_mode: flags.selection.or(file.selection).unwrap_or_default(),
            reranker_mode: flags.reranker.or(file.reranker).unwrap_or_default(),
            context_char_budget: file.context_char_budget.unwrap_or(defaults.context_char_budget),
            fusion_variants: file.fusion_variants.unwrap_or(defaults.fusion_variants),
            retrieval_budget: file.retrieval_budget,
        };
        let cache_dir = if flags.no_cache {
            None
        } else {
            Some(
                flags
                    .cache_dir
                    .or_else(|| env("DMQR_CACHE_DIR").map(PathBuf::from))
                    .or(file.cache_dir)
                    .unwrap_or_else(|| PathBuf::from(DEFAULT_CACHE_DIR)),
            )
        };
        Ok(Self {
            config_file,
            llm_url: env("DMQR_LLM_URL").or(file.llm_url),
            llm_key: env("DMQR_LLM_KEY").or(file.llm_key),
            llm_model: env("DMQR_LLM_MODEL")
                .or(file.llm_model)
                .unwrap_or_else(|| "gpt-4".into()),
            search_url: env("DMQR_SEARCH_URL").or(file.search_url),
            search_key: env("DMQR_SEARCH_KEY").or(file.search_key),
            rerank_url: flags.rerank_url.or(file.rerank_url),
            rerank_key: file.rerank_key,
            cache_dir,
            index: flags
                .index
                .or(file.index)
                .unwrap_or_else(|| PathBuf::from(DEFAULT_INDEX)),
            mock: flags.mock.or(file.mock),
            templates: file.templates,
            demonstrations: file.demonstrations,
            retriever: flags.retriever.or(file.retriever).unwrap_or_default(),
            method: flags.method.or(file.method),
            pipeline,
            item_concurrency: file.item_concurrency.unwrap_or(2),
            requests_per_second: file.requests_per_second,
        })
    }

    /// JSON view with secrets replaced.
    pub fn redacted(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        for key in ["llm_key", "search_key", "rerank_key"] {
            if let Some(slot) = v.get_mut(key) {
                if !slot.is_null() {
                    *slot = serde_json::Value::String("***".into());
                }
            }
        }
        v
    }
}
