//! Domain types shared across the engine: queries, strategy ids, query sets,
//! documents and their identity, ranked lists and pipeline configuration.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("query text is empty")]
    EmptyQuery,
    #[error("rewrite text is empty")]
    EmptyRewrite,
    #[error("duplicate strategy {0} in query set")]
    DuplicateStrategy(StrategyId),
    #[error("document has neither url nor content")]
    EmptyDocument,
    #[error("unknown strategy id {0:?}")]
    UnknownStrategy(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// A user question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
}

impl Query {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self, ModelError> {
        let query = Self {
            id: id.into(),
            text: text.into(),
        };
        query.validate()?;
        Ok(query)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.text.trim().is_empty() {
            return Err(ModelError::EmptyQuery);
        }
        Ok(())
    }
}

/// Identifier of a rewriting strategy.
///
/// The four diverse strategies come first in declaration order, followed by
/// the prompt baselines. `FusionVariant(n)` tags the n-th paraphrase of a
/// fusion-style batch; `Custom` hosts strategies registered at runtime.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StrategyId {
    Gqr,
    Kwr,
    Par,
    Cce,
    BaselineRewrite,
    Hyde,
    FusionVariant(u16),
    Custom(String),
}

impl StrategyId {
    /// The diverse-rewrite pool in declaration order.
    pub const DMQR: [StrategyId; 4] = [
        StrategyId::Gqr,
        StrategyId::Kwr,
        StrategyId::Par,
        StrategyId::Cce,
    ];

    /// Position in the built-in declaration order. Custom strategies share
    /// the last slot and keep their relative input order under stable sorts.
    pub fn declaration_rank(&self) -> u32 {
        match self {
            StrategyId::Gqr => 0,
            StrategyId::Kwr => 1,
            StrategyId::Par => 2,
            StrategyId::Cce => 3,
            StrategyId::BaselineRewrite => 4,
            StrategyId::Hyde => 5,
            StrategyId::FusionVariant(n) => 6 + u32::from(*n),
            StrategyId::Custom(_) => u32::MAX,
        }
    }

    pub fn full_name(&self) -> String {
        match self {
            StrategyId::Gqr => "General Query Rewriting".into(),
            StrategyId::Kwr => "Keyword Rewriting".into(),
            StrategyId::Par => "Pseudo-Answer Rewriting".into(),
            StrategyId::Cce => "Core Content Extraction".into(),
            StrategyId::BaselineRewrite => "Retrieval Rewrite".into(),
            StrategyId::Hyde => "Hypothetical Document".into(),
            StrategyId::FusionVariant(n) => format!("Fusion Variant {n}"),
            StrategyId::Custom(name) => name.clone(),
        }
    }
}

impl fmt::Display for StrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StrategyId::Gqr => f.write_str("GQR"),
            StrategyId::Kwr => f.write_str("KWR"),
            StrategyId::Par => f.write_str("PAR"),
            StrategyId::Cce => f.write_str("CCE"),
            StrategyId::BaselineRewrite => f.write_str("BASELINE_REWRITE"),
            StrategyId::Hyde => f.write_str("HYDE"),
            StrategyId::FusionVariant(n) => write!(f, "FUSION_VARIANT_{n}"),
            StrategyId::Custom(name) => f.write_str(name),
        }
    }
}

impl FromStr for StrategyId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase().replace('-', "_");
        let id = match upper.as_str() {
            "GQR" => StrategyId::Gqr,
            "KWR" => StrategyId::Kwr,
            "PAR" => StrategyId::Par,
            "CCE" => StrategyId::Cce,
            "BASELINE_REWRITE" | "REWRITE" => StrategyId::BaselineRewrite,
            "HYDE" => StrategyId::Hyde,
            "" | "ORIGINAL" => return Err(ModelError::UnknownStrategy(s.to_string())),
            other => {
                if let Some(n) = other.strip_prefix("FUSION_VARIANT_") {
                    let n = n
                        .parse()
                        .map_err(|_| ModelError::UnknownStrategy(s.to_string()))?;
                    StrategyId::FusionVariant(n)
                } else if other
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_')
                {
                    StrategyId::Custom(other.to_string())
                } else {
                    return Err(ModelError::UnknownStrategy(s.to_string()));
                }
            }
        };
        Ok(id)
    }
}

impl Serialize for StrategyId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StrategyId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Which member of a query set produced a retrieval.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum QuerySource {
    Original,
    Strategy(StrategyId),
}

impl fmt::Display for QuerySource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QuerySource::Original => f.write_str("ORIGINAL"),
            QuerySource::Strategy(id) => id.fmt(f),
        }
    }
}

impl Serialize for QuerySource {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for QuerySource {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        if s == "ORIGINAL" {
            Ok(QuerySource::Original)
        } else {
            s.parse()
                .map(QuerySource::Strategy)
                .map_err(serde::de::Error::custom)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewrittenQuery {
    pub strategy: StrategyId,
    pub text: String,
    pub source: Query,
}

impl RewrittenQuery {
    pub fn new(
        strategy: StrategyId,
        text: impl Into<String>,
        source: Query,
    ) -> Result<Self, ModelError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(ModelError::EmptyRewrite);
        }
        Ok(Self {
            strategy,
            text,
            source,
        })
    }
}

/// The original query followed by its strategy-tagged rewrites.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySet {
    pub original: Query,
    pub rewrites: Vec<RewrittenQuery>,
}

impl QuerySet {
    pub fn len(&self) -> usize {
        1 + self.rewrites.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Members in iteration order: the original first, then each rewrite.
    pub fn members(&self) -> impl Iterator<Item = (QuerySource, &str)> {
        std::iter::once((QuerySource::Original, self.original.text.as_str())).chain(
            self.rewrites
                .iter()
                .map(|r| (QuerySource::Strategy(r.strategy.clone()), r.text.as_str())),
        )
    }

    pub fn strategies(&self) -> Vec<StrategyId> {
        self.rewrites.iter().map(|r| r.strategy.clone()).collect()
    }
}

/// Assemble a query set. Rewrites are stably ordered by declaration order.
pub fn build_query_set(
    original: Query,
    mut rewrites: Vec<RewrittenQuery>,
) -> Result<QuerySet, ModelError> {
    original.validate()?;
    for (i, r) in rewrites.iter().enumerate() {
        if rewrites[..i].iter().any(|o| o.strategy == r.strategy) {
            return Err(ModelError::DuplicateStrategy(r.strategy.clone()));
        }
        if r.text.trim().is_empty() {
            return Err(ModelError::EmptyRewrite);
        }
    }
    rewrites.sort_by_key(|r| r.strategy.declaration_rank());
    Ok(QuerySet { original, rewrites })
}

/// Stable identity of a document across retrievals.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DocumentKey(pub String);

impl DocumentKey {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DocumentKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Lowercase scheme and host, drop the fragment and trailing slashes.
pub fn normalize_url(raw: &str) -> String {
    let raw = raw.trim();
    match url::Url::parse(raw) {
        Ok(mut parsed) => {
            parsed.set_fragment(None);
            if parsed.query().is_some() {
                let path = parsed.path().trim_end_matches('/').to_string();
                parsed.set_path(&path);
                parsed.to_string()
            } else {
                parsed.as_str().trim_end_matches('/').to_string()
            }
        }
        Err(_) => {
            let without_fragment = raw.split('#').next().unwrap_or_default();
            let (head, tail) = match without_fragment.find("://") {
                Some(pos) => {
                    let rest = &without_fragment[pos + 3..];
                    let host_end = rest.find('/').map_or(without_fragment.len(), |p| pos + 3 + p);
                    without_fragment.split_at(host_end)
                }
                None => (without_fragment, ""),
            };
            let tail = tail.trim_end_matches('/');
            let head = if tail.is_empty() {
                head.trim_end_matches('/')
            } else {
                head
            };
            format!("{}{}", head.to_lowercase(), tail)
        }
    }
}

fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Compute the dedup key: normalized url when present, else a SHA-256
/// digest of the whitespace-normalized content.
pub fn document_key(url: Option<&str>, content: &str) -> Result<DocumentKey, ModelError> {
    if let Some(url) = url.map(str::trim).filter(|u| !u.is_empty()) {
        return Ok(DocumentKey(format!("url:{}", normalize_url(url))));
    }
    let normalized = normalize_whitespace(content);
    if normalized.is_empty() {
        return Err(ModelError::EmptyDocument);
    }
    let digest = Sha256::digest(normalized.as_bytes());
    Ok(DocumentKey(format!("sha256:{}", hex::encode(digest))))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub key: DocumentKey,
    pub title: String,
    pub content: String,
    pub url: Option<String>,
    pub retrieved_by: QuerySource,
    pub retrieval_rank: u32,
}

impl Document {
    /// A document with its key derived from url/content. Provenance is
    /// filled in when the document is placed into a ranked list.
    pub fn new(
        title: impl Into<String>,
        content: impl Into<String>,
        url: Option<String>,
    ) -> Result<Self, ModelError> {
        let content = content.into();
        let key = document_key(url.as_deref(), &content)?;
        Ok(Self {
            key,
            title: title.into(),
            content,
            url,
            retrieved_by: QuerySource::Original,
            retrieval_rank: 1,
        })
    }
}

/// Documents returned for one query, ranked 1..len without duplicate keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query: String,
    pub docs: Vec<Document>,
}

impl RankedList {
    /// Renumbers ranks from 1 and drops repeated keys (first occurrence wins).
    pub fn new(query: impl Into<String>, docs: Vec<Document>) -> Self {
        let mut seen = std::collections::HashSet::new();
        let docs = docs
            .into_iter()
            .filter(|d| seen.insert(d.key.clone()))
            .enumerate()
            .map(|(i, mut d)| {
                d.retrieval_rank = i as u32 + 1;
                d
            })
            .collect();
        Self {
            query: query.into(),
            docs,
        }
    }

    pub fn empty(query: impl Into<String>) -> Self {
        Self {
            query: query.into(),
            docs: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Tag every document with the query-set member that retrieved it.
    pub fn with_source(mut self, source: &QuerySource) -> Self {
        for d in &mut self.docs {
            d.retrieved_by = source.clone();
        }
        self
    }

    pub fn is_well_formed(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        self.docs
            .iter()
            .enumerate()
            .all(|(i, d)| d.retrieval_rank as usize == i + 1 && seen.insert(&d.key))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    #[default]
    FixedAll,
    Adaptive,
}

impl FromStr for SelectionMode {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "all" | "fixed_all" => Ok(SelectionMode::FixedAll),
            "adaptive" => Ok(SelectionMode::Adaptive),
            _ => Err(ModelError::InvalidConfig(format!("selection mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RerankerMode {
    #[default]
    Rrf,
    Lexical,
    Remote,
}

impl FromStr for RerankerMode {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rrf" => Ok(RerankerMode::Rrf),
            "lexical" => Ok(RerankerMode::Lexical),
            "remote" => Ok(RerankerMode::Remote),
            _ => Err(ModelError::InvalidConfig(format!("reranker mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Documents retrieved per query-set member (M).
    pub per_query_limit: usize,
    /// Documents handed to the answer model (K).
    pub context_size: usize,
    pub rrf_constant: u32,
    pub concurrency_bound: usize,
    pub selection_mode: SelectionMode,
    pub reranker_mode: RerankerMode,
    /// Character budget per context document.
    pub context_char_budget: usize,
    /// Number of paraphrases requested by fusion-style rewriting.
    pub fusion_variants: usize,
    /// Optional cap on retrieval calls per query; extra calls are skipped.
    pub retrieval_budget: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            per_query_limit: 10,
            context_size: 5,
            rrf_constant: 60,
            concurrency_bound: 4,
            selection_mode: SelectionMode::FixedAll,
            reranker_mode: RerankerMode::Rrf,
            context_char_budget: 1500,
            fusion_variants: 4,
            retrieval_budget: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self, max_pool_size: usize) -> Result<(), ModelError> {
        let positive = [
            ("per_query_limit", self.per_query_limit),
            ("context_size", self.context_size),
            ("rrf_constant", self.rrf_constant as usize),
            ("concurrency_bound", self.concurrency_bound),
            ("context_char_budget", self.context_char_budget),
            ("fusion_variants", self.fusion_variants),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(ModelError::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        if self.retrieval_budget == Some(0) {
            return Err(ModelError::InvalidConfig(
                "retrieval_budget must be >= 1".into(),
            ));
        }
        let ceiling = self.per_query_limit * (max_pool_size + 1);
        if self.context_size > ceiling {
            return Err(ModelError::InvalidConfig(format!(
                "context_size {} exceeds per_query_limit x (pool size + 1) = {ceiling}",
                self.context_size
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(text: &str) -> Query {
        Query::new("q1", text).unwrap()
    }

    fn rw(id: StrategyId, text: &str) -> RewrittenQuery {
        RewrittenQuery::new(id, text, q("original")).unwrap()
    }

    #[test]
    fn query_set_without_rewrites() {
        let set = build_query_set(q("original"), vec![]).unwrap();
        assert_eq!(set.len(), 1);
        let members: Vec<_> = set.members().collect();
        assert_eq!(members, vec![(QuerySource::Original, "original")]);
    }

    #[test]
    fn query_set_orders_original_then_pool_order() {
        let set = build_query_set(
            q("original"),
            vec![rw(StrategyId::Par, "r2"), rw(StrategyId::Gqr, "r1")],
        )
        .unwrap();
        let texts: Vec<_> = set.members().map(|(_, t)| t).collect();
        assert_eq!(texts, vec!["original", "r1", "r2"]);
    }

    #[test]
    fn duplicate_strategy_rejected() {
        let err = build_query_set(
            q("original"),
            vec![rw(StrategyId::Gqr, "r1"), rw(StrategyId::Gqr, "r1'")],
        )
        .unwrap_err();
        assert_eq!(err, ModelError::DuplicateStrategy(StrategyId::Gqr));
    }

    #[test]
    fn empty_query_rejected() {
        assert_eq!(Query::new("x", "   \n").unwrap_err(), ModelError::EmptyQuery);
        let bad = Query {
            id: "x".into(),
            text: " ".into(),
        };
        assert_eq!(
            build_query_set(bad, vec![]).unwrap_err(),
            ModelError::EmptyQuery
        );
    }

    #[test]
    fn url_keys_normalize() {
        let a = document_key(Some("https://X.com/a/"), "body").unwrap();
        let b = document_key(Some("https://x.com/a#top"), "body2").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.as_str(), "url:https://x.com/a");
        assert_eq!(normalize_url("HTTPS://Example.COM/"), "https://example.com");
        assert_eq!(
            normalize_url("https://x.com/a/?q=1#f"),
            "https://x.com/a?q=1"
        );
    }

    #[test]
    fn content_keys_are_deterministic_and_distinct() {
        let a1 = document_key(None, "abc").unwrap();
        let a2 = document_key(None, "abc").unwrap();
        assert_eq!(a1, a2);
        let expected_abc = hex::encode(Sha256::digest(b"abc"));
        let expected_abd = hex::encode(Sha256::digest(b"abd"));
        assert_ne!(expected_abc, expected_abd);
        assert_eq!(a1.as_str(), format!("sha256:{expected_abc}"));
        let b = document_key(None, "abd").unwrap();
        assert_eq!(b.as_str(), format!("sha256:{expected_abd}"));
        assert_eq!(
            document_key(None, "  a \n b ").unwrap(),
            document_key(None, "a b").unwrap()
        );
    }

    #[test]
    fn empty_document_rejected() {
        assert_eq!(document_key(None, " "), Err(ModelError::EmptyDocument));
        assert_eq!(document_key(Some(""), ""), Err(ModelError::EmptyDocument));
    }

    #[test]
    fn strategy_ids_parse_and_print() {
        for id in [
            StrategyId::Gqr,
            StrategyId::Kwr,
            StrategyId::Par,
            StrategyId::Cce,
            StrategyId::BaselineRewrite,
            StrategyId::Hyde,
            StrategyId::FusionVariant(3),
            StrategyId::Custom("SUBQ".into()),
        ] {
            assert_eq!(id.to_string().parse::<StrategyId>().unwrap(), id);
        }
        assert_eq!("gqr".parse::<StrategyId>().unwrap(), StrategyId::Gqr);
        assert!("bad id!".parse::<StrategyId>().is_err());
        assert!("ORIGINAL".parse::<StrategyId>().is_err());
    }

    #[test]
    fn ranked_list_renumbers_and_dedups() {
        let d = |t: &str| Document::new("t", t, None).unwrap();
        let list = RankedList::new("q", vec![d("a"), d("b"), d("a"), d("c")]);
        assert!(list.is_well_formed());
        assert_eq!(list.len(), 3);
        assert_eq!(list.docs[2].retrieval_rank, 3);
    }

    #[test]
    fn config_validation() {
        let config = PipelineConfig::default();
        config.validate(4).unwrap();
        let too_big = PipelineConfig {
            context_size: 51,
            ..PipelineConfig::default()
        };
        assert!(too_big.validate(4).is_err());
        let zero = PipelineConfig {
            per_query_limit: 0,
            ..PipelineConfig::default()
        };
        assert!(zero.validate(4).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_strategy() -> impl Strategy<Value = StrategyId> {
            prop_oneof![
                Just(StrategyId::Gqr),
                Just(StrategyId::Kwr),
                Just(StrategyId::Par),
                Just(StrategyId::Cce),
                Just(StrategyId::Hyde),
                (1u16..9).prop_map(StrategyId::FusionVariant),
                "[A-Z][A-Z0-9_]{0,6}".prop_map(|s| s.parse().unwrap()),
            ]
        }

        fn arb_document() -> impl Strategy<Value = Document> {
            (
                "[a-z ]{0,12}",
                "[a-zA-Z0-9 ]{1,40}",
                proptest::option::of("https://[a-z]{1,5}\\.com/[a-z]{0,4}"),
                1u32..20,
                prop_oneof![
                    Just(QuerySource::Original),
                    arb_strategy().prop_map(QuerySource::Strategy)
                ],
            )
                .prop_filter_map("needs a key", |(title, content, url, rank, src)| {
                    let mut d = Document::new(title, content, url).ok()?;
                    d.retrieval_rank = rank;
                    d.retrieved_by = src;
                    Some(d)
                })
        }

        proptest! {
            #[test]
            fn document_round_trips(doc in arb_document()) {
                let json = serde_json::to_string(&doc).unwrap();
                let back: Document = serde_json::from_str(&json).unwrap();
                prop_assert_eq!(back, doc);
            }

            #[test]
            fn query_set_round_trips(texts in proptest::collection::vec("[a-z]{1,8}", 0..5)) {
                let original = Query::new("id", "question").unwrap();
                let rewrites = texts
                    .iter()
                    .enumerate()
                    .map(|(i, t)| RewrittenQuery::new(StrategyId::FusionVariant(i as u16 + 1), t.clone(), original.clone()).unwrap())
                    .collect();
                let set = build_query_set(original, rewrites).unwrap();
                let json = serde_json::to_string(&set).unwrap();
                let back: QuerySet = serde_json::from_str(&json).unwrap();
                prop_assert_eq!(back, set);
            }

            #[test]
            fn key_equality_matches_normalized_identity(
                a in "[a-c ]{1,6}",
                b in "[a-c ]{1,6}",
            ) {
                let (ka, kb) = (document_key(None, &a), document_key(None, &b));
                match (ka, kb) {
                    (Ok(ka), Ok(kb)) => prop_assert_eq!(ka == kb, normalize_whitespace(&a) == normalize_whitespace(&b)),
                    (Err(_), _) | (_, Err(_)) => {}
                }
            }

            #[test]
            fn url_keys_never_collide_with_content_keys(host in "[a-z]{1,6}", body in "[a-z]{1,6}") {
                let url_key = document_key(Some(&format!("https://{host}.org/")), &body).unwrap();
                let content_key = document_key(None, &body).unwrap();
                prop_assert_ne!(url_key, content_key);
            }

            #[test]
            fn query_set_order_is_deterministic(perm in Just(vec![StrategyId::Cce, StrategyId::Gqr, StrategyId::Par, StrategyId::Kwr]).prop_shuffle()) {
                let original = Query::new("id", "question").unwrap();
                let rewrites = perm
                    .iter()
                    .map(|s| RewrittenQuery::new(s.clone(), s.to_string(), original.clone()).unwrap())
                    .collect();
                let set = build_query_set(original, rewrites).unwrap();
                prop_assert_eq!(set.strategies(), StrategyId::DMQR.to_vec());
            }
        }
    }
}
