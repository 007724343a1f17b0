//! The strategy pool and the LLM-backed rewriters.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{ChatRequest, Completer, LlmError};
use crate::model::{Query, RewrittenQuery, StrategyId};
use crate::template::{PromptTemplate, TemplateError, TemplateSet};

/// Rewrites longer than this many characters are cut at a word boundary.
pub const MAX_REWRITE_CHARS: usize = 512;

#[derive(Debug, Error)]
pub enum RewriteError {
    #[error("strategy {0} is not registered")]
    UnknownStrategy(StrategyId),
    #[error("strategy {0} is already registered")]
    DuplicateRegistration(StrategyId),
    #[error("{strategy} produced unusable output: {output:?}")]
    ParseFailure { strategy: StrategyId, output: String },
    #[error("variant count must be at least 1")]
    InvalidCount,
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// How a strategy's completion is turned into a retrieval string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputParser {
    /// One cleaned line (GQR, CCE, generic rewrite).
    SingleLine,
    /// Keyword list joined by spaces (KWR).
    Keywords,
    /// Free text passed through trimmed (PAR, HyDE).
    Passage,
    /// `1. ...` numbered list (fusion variants).
    NumberedList,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyDescriptor {
    pub id: StrategyId,
    pub description: String,
    pub template: PromptTemplate,
    pub parser: OutputParser,
}

fn builtin_descriptor(id: StrategyId, templates: &TemplateSet) -> StrategyDescriptor {
    let (template, description, parser) = match id {
        StrategyId::Gqr => (
            "gqr",
            "Refines the query while keeping all of its information: fixes wording and removes noise. Useful for noisy, colloquial or misspelled queries.",
            OutputParser::SingleLine,
        ),
        StrategyId::Kwr => (
            "kwr",
            "Extracts the keywords (nouns, subjects) of the query as a search-engine style query. Useful for long or conversational queries with clear entities.",
            OutputParser::Keywords,
        ),
        StrategyId::Par => (
            "par",
            "Writes a pseudo-answer and searches with it, matching answer-style documents. Useful for factual questions and when the query wording differs from how answers are written.",
            OutputParser::Passage,
        ),
        StrategyId::Cce => (
            "cce",
            "Drops superfluous details and keeps the core information need. Useful for over-detailed queries with background or multiple clauses.",
            OutputParser::SingleLine,
        ),
        StrategyId::BaselineRewrite => (
            "rewrite",
            "General single rewrite of the query for retrieval.",
            OutputParser::SingleLine,
        ),
        StrategyId::Hyde => (
            "hyde",
            "Writes a hypothetical document capturing the query semantics and searches with it.",
            OutputParser::Passage,
        ),
        _ => unreachable!("not a built-in descriptor"),
    };
    StrategyDescriptor {
        id,
        description: description.to_string(),
        template: templates
            .get(template)
            .cloned()
            .expect("built-in template present"),
        parser,
    }
}

/// Ordered, extensible registry of rewriting strategies.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StrategyPool {
    strategies: Vec<StrategyDescriptor>,
}

impl StrategyPool {
    pub fn empty() -> Self {
        Self::default()
    }

    /// GQR, KWR, PAR, CCE in declaration order.
    pub fn dmqr(templates: &TemplateSet) -> Self {
        Self {
            strategies: StrategyId::DMQR
                .iter()
                .map(|id| builtin_descriptor(id.clone(), templates))
                .collect(),
        }
    }

    /// Every built-in strategy including the single-rewrite baselines.
    pub fn builtin(templates: &TemplateSet) -> Self {
        let mut pool = Self::dmqr(templates);
        for id in [StrategyId::BaselineRewrite, StrategyId::Hyde] {
            pool.strategies.push(builtin_descriptor(id, templates));
        }
        pool
    }

    pub fn register(&mut self, descriptor: StrategyDescriptor) -> Result<(), RewriteError> {
        if self.get(&descriptor.id).is_some() {
            return Err(RewriteError::DuplicateRegistration(descriptor.id));
        }
        self.strategies.push(descriptor);
        Ok(())
    }

    pub fn get(&self, id: &StrategyId) -> Option<&StrategyDescriptor> {
        self.strategies.iter().find(|d| &d.id == id)
    }

    pub fn ids(&self) -> Vec<StrategyId> {
        self.strategies.iter().map(|d| d.id.clone()).collect()
    }

    pub fn descriptors(&self) -> &[StrategyDescriptor] {
        &self.strategies
    }

    pub fn len(&self) -> usize {
        self.strategies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strategies.is_empty()
    }

    /// Sub-pool with the given ids, in this pool's order.
    pub fn subset(&self, ids: &[StrategyId]) -> Result<Self, RewriteError> {
        if let Some(missing) = ids.iter().find(|id| self.get(id).is_none()) {
            return Err(RewriteError::UnknownStrategy(missing.clone()));
        }
        Ok(Self {
            strategies: self
                .strategies
                .iter()
                .filter(|d| ids.contains(&d.id))
                .cloned()
                .collect(),
        })
    }
}

/// Cut `text` to at most `limit` characters at the last whitespace.
pub fn truncate_at_whitespace(text: &str, limit: usize) -> (String, bool) {
    if text.chars().count() <= limit {
        return (text.to_string(), false);
    }
    let end = text
        .char_indices()
        .nth(limit)
        .map_or(text.len(), |(i, _)| i);
    let head = &text[..end];
    let cut = match head.rfind(char::is_whitespace) {
        Some(pos) if pos > 0 => head[..pos].trim_end(),
        _ => head,
    };
    (cut.to_string(), true)
}

fn strip_quotes(s: &str) -> &str {
    let s = s.trim();
    for (open, close) in [('"', '"'), ('\'', '\''), ('“', '”'), ('`', '`')] {
        if s.len() >= 2 && s.starts_with(open) && s.ends_with(close) {
            return s[open.len_utf8()..s.len() - close.len_utf8()].trim();
        }
    }
    s
}

fn collapse(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

const LINE_LABELS: &[&str] = &[
    "rewritten query:",
    "search query:",
    "core query:",
    "core content:",
    "query:",
    "rewrite:",
];

fn strip_label<'a>(line: &'a str, labels: &[&str]) -> &'a str {
    let lower = line.to_ascii_lowercase();
    for label in labels {
        if lower.starts_with(label) && line.is_char_boundary(label.len()) {
            return line[label.len()..].trim();
        }
    }
    line
}

fn parse_single_line(output: &str) -> Option<String> {
    let line = output.lines().map(str::trim).find(|l| !l.is_empty())?;
    let cleaned = collapse(strip_quotes(strip_label(line, LINE_LABELS)));
    (!cleaned.is_empty()).then_some(cleaned)
}

fn parse_keywords(output: &str) -> Option<String> {
    let labeled = output.lines().find_map(|line| {
        let lower = line.to_ascii_lowercase();
        lower
            .find("keywords:")
            .map(|pos| &line[pos + "keywords:".len()..])
    });
    let body = labeled.unwrap_or(output);
    let words: Vec<String> = body
        .split([',', ';', '\n'])
        .map(|k| k.trim().trim_start_matches(['-', '*', '•']))
        .map(|k| collapse(strip_quotes(k)))
        .filter(|k| !k.is_empty())
        .collect();
    let joined = words.join(" ");
    (!joined.is_empty()).then_some(joined)
}

fn parse_passage(output: &str) -> Option<String> {
    let text = output.trim();
    (!text.is_empty()).then(|| text.to_string())
}

/// Items of a `1. a` / `2) b` list. Items without any alphanumeric
/// character are dropped.
pub fn parse_numbered_list(output: &str) -> Vec<String> {
    output
        .lines()
        .filter_map(|line| {
            let line = line.trim_start();
            let digits = line.bytes().take_while(u8::is_ascii_digit).count();
            if digits == 0 {
                return None;
            }
            let rest = line[digits..].strip_prefix(['.', ')', ':'])?;
            let item = collapse(strip_quotes(rest));
            item.chars().any(char::is_alphanumeric).then_some(item)
        })
        .collect()
}

pub fn parse_output(parser: OutputParser, output: &str) -> Option<String> {
    match parser {
        OutputParser::SingleLine => parse_single_line(output),
        OutputParser::Keywords => parse_keywords(output),
        OutputParser::Passage => parse_passage(output),
        OutputParser::NumberedList => {
            let items = parse_numbered_list(output);
            (!items.is_empty()).then(|| items.join(" "))
        }
    }
}

/// The result of one strategy call, including degradation flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteOutcome {
    pub rewrite: RewrittenQuery,
    /// The original query text was substituted for an unusable rewrite.
    pub fallback: bool,
    pub truncated: bool,
    pub retries: u32,
    pub error: Option<String>,
}

fn rewrite_prompt(
    descriptor: &StrategyDescriptor,
    query: &Query,
) -> Result<ChatRequest, RewriteError> {
    let bindings = HashMap::from([("query", query.text.as_str())]);
    Ok(ChatRequest::new(descriptor.template.render(&bindings)?))
}

/// The chat request sent for `strategy`; exposed so fixtures can be keyed
/// on the exact prompt.
pub fn rewrite_request(
    pool: &StrategyPool,
    strategy: &StrategyId,
    query: &Query,
) -> Result<ChatRequest, RewriteError> {
    let descriptor = pool
        .get(strategy)
        .ok_or_else(|| RewriteError::UnknownStrategy(strategy.clone()))?;
    rewrite_prompt(descriptor, query)
}

fn rewrite_inner(
    pool: &StrategyPool,
    strategy: &StrategyId,
    query: &Query,
    completer: &dyn Completer,
) -> Result<(RewrittenQuery, bool, u32), RewriteError> {
    let descriptor = pool
        .get(strategy)
        .ok_or_else(|| RewriteError::UnknownStrategy(strategy.clone()))?;
    let response = completer.complete(&rewrite_prompt(descriptor, query)?)?;
    let parsed = parse_output(descriptor.parser, &response.text).ok_or_else(|| {
        RewriteError::ParseFailure {
            strategy: strategy.clone(),
            output: response.text.clone(),
        }
    })?;
    let (text, truncated) = truncate_at_whitespace(&parsed, MAX_REWRITE_CHARS);
    let rewrite = RewrittenQuery::new(strategy.clone(), text, query.clone()).map_err(|_| {
        RewriteError::ParseFailure {
            strategy: strategy.clone(),
            output: response.text.clone(),
        }
    })?;
    Ok((rewrite, truncated, response.retries))
}

/// Rewrite `query` with one registered strategy.
pub fn rewrite(
    pool: &StrategyPool,
    strategy: &StrategyId,
    query: &Query,
    completer: &dyn Completer,
) -> Result<RewrittenQuery, RewriteError> {
    rewrite_inner(pool, strategy, query, completer).map(|(r, _, _)| r)
}

/// Single-rewrite baselines (generic rewrite, HyDE).
pub fn rewrite_baseline(
    pool: &StrategyPool,
    kind: &StrategyId,
    query: &Query,
    completer: &dyn Completer,
) -> Result<RewrittenQuery, RewriteError> {
    match kind {
        StrategyId::BaselineRewrite | StrategyId::Hyde => rewrite(pool, kind, query, completer),
        other => Err(RewriteError::UnknownStrategy(other.clone())),
    }
}

/// Like [`rewrite`] but never fails for a registered strategy: any error
/// degrades to the original query text with `fallback` set.
pub fn rewrite_or_fallback(
    pool: &StrategyPool,
    strategy: &StrategyId,
    query: &Query,
    completer: &dyn Completer,
) -> RewriteOutcome {
    match rewrite_inner(pool, strategy, query, completer) {
        Ok((rewrite, truncated, retries)) => RewriteOutcome {
            rewrite,
            fallback: false,
            truncated,
            retries,
            error: None,
        },
        Err(e) => {
            log::warn!("rewrite {strategy} fell back to the original query: {e}");
            let (text, truncated) = truncate_at_whitespace(&query.text, MAX_REWRITE_CHARS);
            RewriteOutcome {
                rewrite: RewrittenQuery {
                    strategy: strategy.clone(),
                    text,
                    source: query.clone(),
                },
                fallback: true,
                truncated,
                retries: 0,
                error: Some(e.to_string()),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionOutcome {
    pub variants: Vec<RewrittenQuery>,
    pub requested: usize,
    /// Requested minus parsed variants.
    pub shortfall: usize,
    pub truncated: usize,
    pub retries: u32,
}

pub fn fusion_request(
    templates: &TemplateSet,
    query: &Query,
    count: usize,
) -> Result<ChatRequest, RewriteError> {
    let count_text = count.to_string();
    let bindings = HashMap::from([("query", query.text.as_str()), ("count", &count_text)]);
    Ok(ChatRequest::new(templates.get("fusion")?.render(&bindings)?))
}

/// One batched call asking for `count` paraphrases, tagged
/// `FUSION_VARIANT_1..n` in list order.
pub fn rewrite_fusion_variants(
    templates: &TemplateSet,
    query: &Query,
    count: usize,
    completer: &dyn Completer,
) -> Result<FusionOutcome, RewriteError> {
    if count == 0 {
        return Err(RewriteError::InvalidCount);
    }
    let response = completer.complete(&fusion_request(templates, query, count)?)?;
    let items = parse_numbered_list(&response.text);
    if items.is_empty() {
        return Err(RewriteError::ParseFailure {
            strategy: StrategyId::FusionVariant(1),
            output: response.text,
        });
    }
    let mut truncated = 0;
    let variants: Vec<RewrittenQuery> = items
        .into_iter()
        .take(count)
        .enumerate()
        .map(|(i, item)| {
            let (text, cut) = truncate_at_whitespace(&item, MAX_REWRITE_CHARS);
            truncated += usize::from(cut);
            RewrittenQuery {
                strategy: StrategyId::FusionVariant(i as u16 + 1),
                text,
                source: query.clone(),
            }
        })
        .collect();
    if variants.len() < count {
        log::warn!(
            "fusion rewriting parsed {} of {count} variants",
            variants.len()
        );
    }
    Ok(FusionOutcome {
        shortfall: count - variants.len(),
        requested: count,
        variants,
        truncated,
        retries: response.retries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{ChatResponse, ScriptedCompleter};

    struct Failing(LlmError);
    impl Completer for Failing {
        fn complete(&self, _: &ChatRequest) -> Result<ChatResponse, LlmError> {
            Err(self.0.clone())
        }
    }

    fn setup() -> (TemplateSet, StrategyPool) {
        let t = TemplateSet::builtin();
        let pool = StrategyPool::builtin(&t);
        (t, pool)
    }

    fn q(text: &str) -> Query {
        Query::new("q", text).unwrap()
    }

    #[test]
    fn gqr_passthrough() {
        let (_, pool) = setup();
        let mock = ScriptedCompleter::new().with_default("Who is the current CEO of Twitter?");
        let r = rewrite(&pool, &StrategyId::Gqr, &q("whos the ceo of twiter now??"), &mock).unwrap();
        assert_eq!(r.strategy, StrategyId::Gqr);
        assert_eq!(r.text, "Who is the current CEO of Twitter?");
    }

    #[test]
    fn kwr_labeled_keywords() {
        let (_, pool) = setup();
        let mock = ScriptedCompleter::new().with_default("KEYWORDS: transformer, citation count");
        let r = rewrite(&pool, &StrategyId::Kwr, &q("how cited is the transformer paper"), &mock)
            .unwrap();
        assert_eq!(r.text, "transformer citation count");
    }

    #[test]
    fn kwr_bare_lists() {
        assert_eq!(parse_keywords("alpha beta,  gamma").unwrap(), "alpha beta gamma");
        assert_eq!(parse_keywords("alpha beta gamma").unwrap(), "alpha beta gamma");
        assert_eq!(parse_keywords("- alpha\n- beta").unwrap(), "alpha beta");
        assert!(parse_keywords("KEYWORDS: , ,").is_none());
    }

    #[test]
    fn par_empty_output_is_parse_failure_and_falls_back() {
        let (_, pool) = setup();
        let mock = ScriptedCompleter::new().with_default("");
        let query = q("capital of France?");
        assert!(matches!(
            rewrite(&pool, &StrategyId::Par, &query, &mock),
            Err(RewriteError::ParseFailure { .. })
        ));
        let outcome = rewrite_or_fallback(&pool, &StrategyId::Par, &query, &mock);
        assert!(outcome.fallback);
        assert_eq!(outcome.rewrite.text, query.text);
        assert_eq!(outcome.rewrite.strategy, StrategyId::Par);
    }

    #[test]
    fn single_line_cleanup() {
        assert_eq!(
            parse_single_line("\n  Rewritten query: \"capital of France\"\nextra").unwrap(),
            "capital of France"
        );
        assert!(parse_single_line("  \n ").is_none());
    }

    #[test]
    fn baselines() {
        let (_, pool) = setup();
        let mock = ScriptedCompleter::new().with_default("better query");
        let r = rewrite_baseline(&pool, &StrategyId::BaselineRewrite, &q("x y"), &mock).unwrap();
        assert_eq!(r.strategy, StrategyId::BaselineRewrite);
        assert_eq!(r.text, "better query");

        let doc = "The capital of France is Paris.\nIt lies on the Seine.";
        let mock = ScriptedCompleter::new().with_default(doc);
        let r = rewrite_baseline(&pool, &StrategyId::Hyde, &q("capital of France?"), &mock).unwrap();
        assert_eq!(r.text, doc);

        let failing = Failing(LlmError::Transport {
            message: "down".into(),
            attempts: 1,
        });
        match rewrite_baseline(&pool, &StrategyId::Hyde, &q("x"), &failing) {
            Err(RewriteError::Llm(LlmError::Transport { message, .. })) => assert_eq!(message, "down"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            rewrite_baseline(&pool, &StrategyId::Gqr, &q("x"), &mock),
            Err(RewriteError::UnknownStrategy(_))
        ));
    }

    #[test]
    fn fusion_variants_full() {
        let (t, _) = setup();
        let mock = ScriptedCompleter::new().with_default("1. a\n2. b\n3. c\n4. d");
        let out = rewrite_fusion_variants(&t, &q("x"), 4, &mock).unwrap();
        let texts: Vec<_> = out.variants.iter().map(|v| v.text.as_str()).collect();
        assert_eq!(texts, vec!["a", "b", "c", "d"]);
        assert_eq!(out.shortfall, 0);
        assert_eq!(out.variants[3].strategy, StrategyId::FusionVariant(4));
    }

    #[test]
    fn fusion_variants_shortfall() {
        let (t, _) = setup();
        let mock = ScriptedCompleter::new().with_default("1. a\n2.\n3. c");
        let out = rewrite_fusion_variants(&t, &q("x"), 4, &mock).unwrap();
        let texts: Vec<_> = out.variants.iter().map(|v| v.text.as_str()).collect();
        assert_eq!(texts, vec!["a", "c"]);
        assert_eq!(out.shortfall, 2);
        assert_eq!(out.requested, 4);
    }

    #[test]
    fn fusion_single_and_failure() {
        let (t, _) = setup();
        let mock = ScriptedCompleter::new().with_default("1. a");
        let out = rewrite_fusion_variants(&t, &q("x"), 1, &mock).unwrap();
        assert_eq!(out.variants.len(), 1);
        assert_eq!(out.variants[0].text, "a");

        let mock = ScriptedCompleter::new().with_default("no list here");
        assert!(matches!(
            rewrite_fusion_variants(&t, &q("x"), 3, &mock),
            Err(RewriteError::ParseFailure { .. })
        ));
        assert!(matches!(
            rewrite_fusion_variants(&t, &q("x"), 0, &mock),
            Err(RewriteError::InvalidCount)
        ));
    }

    #[test]
    fn long_rewrites_truncate_at_whitespace() {
        let word = "abcdefghi ";
        let long = word.repeat(60);
        let (cut, truncated) = truncate_at_whitespace(&long, MAX_REWRITE_CHARS);
        assert!(truncated);
        assert!(cut.chars().count() <= MAX_REWRITE_CHARS);
        assert!(cut.ends_with("abcdefghi"));
        let (same, t) = truncate_at_whitespace("short", 512);
        assert_eq!((same.as_str(), t), ("short", false));
        let (hard, _) = truncate_at_whitespace(&"x".repeat(600), 512);
        assert_eq!(hard.len(), 512);
    }

    #[test]
    fn pool_order_and_registration() {
        let (t, mut pool) = setup();
        assert_eq!(
            StrategyPool::dmqr(&t).ids(),
            StrategyId::DMQR.to_vec()
        );
        let dup = pool.get(&StrategyId::Gqr).unwrap().clone();
        assert!(matches!(
            pool.register(dup),
            Err(RewriteError::DuplicateRegistration(_))
        ));
        pool.register(StrategyDescriptor {
            id: StrategyId::Custom("SUBQ".into()),
            description: "split into sub-questions".into(),
            template: PromptTemplate::new("subq", "Split: {query}"),
            parser: OutputParser::NumberedList,
        })
        .unwrap();
        let sub = pool
            .subset(&[StrategyId::Custom("SUBQ".into()), StrategyId::Kwr])
            .unwrap();
        assert_eq!(sub.ids(), vec![StrategyId::Kwr, StrategyId::Custom("SUBQ".into())]);
        for d in pool.descriptors() {
            assert!(!d.description.is_empty());
        }
    }
}
