//! Stage timing, event collection and diversity reporting.

use std::collections::{BTreeSet, HashMap};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::model::{QuerySet, QuerySource, RankedList};
use crate::ranking::deduplicate;
use crate::retrieval::tokenize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    /// Milliseconds since the run started (monotonic clock).
    pub start_ms: f64,
    pub end_ms: f64,
    pub wall_ms: f64,
}

/// Monotonic clock anchored at the start of a run.
#[derive(Debug)]
pub struct Stopwatch {
    origin: Instant,
    timings: Mutex<Vec<StageTiming>>,
}

impl Default for Stopwatch {
    fn default() -> Self {
        Self::new()
    }
}

impl Stopwatch {
    pub fn new() -> Self {
        Self {
            origin: Instant::now(),
            timings: Mutex::new(Vec::new()),
        }
    }

    pub fn record(&self, stage: impl Into<String>, start: Instant, end: Instant) {
        let offset = |t: Instant| t.saturating_duration_since(self.origin).as_secs_f64() * 1e3;
        let (start_ms, end_ms) = (offset(start), offset(end.max(start)));
        self.timings
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(StageTiming {
                stage: stage.into(),
                start_ms,
                end_ms,
                wall_ms: end_ms - start_ms,
            });
    }

    /// Run `f` and record it as `stage`.
    pub fn time<T>(&self, stage: impl Into<String>, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.record(stage, start, Instant::now());
        out
    }

    pub fn finish(self) -> Vec<StageTiming> {
        let mut timings = self.timings.into_inner().unwrap_or_else(|e| e.into_inner());
        timings.sort_by(|a, b| a.start_ms.total_cmp(&b.start_ms).then_with(|| a.stage.cmp(&b.stage)));
        timings
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Info,
    Warn,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub level: Level,
    pub stage: String,
    pub message: String,
}

/// Append-only, thread-safe event log; optionally mirrored to stderr as
/// newline-delimited JSON.
#[derive(Debug, Default)]
pub struct EventSink {
    events: Mutex<Vec<TraceEvent>>,
    stream_stderr: bool,
}

impl EventSink {
    pub fn new(stream_stderr: bool) -> Self {
        Self {
            events: Mutex::new(Vec::new()),
            stream_stderr,
        }
    }

    pub fn emit(&self, level: Level, stage: &str, message: impl Into<String>) {
        let event = TraceEvent {
            level,
            stage: stage.to_string(),
            message: message.into(),
        };
        if self.stream_stderr {
            if let Ok(line) = serde_json::to_string(&event) {
                eprintln!("{line}");
            }
        }
        self.events
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(event);
    }

    pub fn snapshot(&self) -> Vec<TraceEvent> {
        self.events.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

/// |A ∩ B| / |A ∪ B| over lowercase token sets; two empty sets give 1.
pub fn jaccard(a: &str, b: &str) -> f64 {
    let sa: BTreeSet<String> = tokenize(a).into_iter().collect();
    let sb: BTreeSet<String> = tokenize(b).into_iter().collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        return 1.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniqueCount {
    pub source: QuerySource,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityStats {
    pub sources: Vec<QuerySource>,
    /// Symmetric, unit diagonal, aligned with `sources`.
    pub jaccard: Vec<Vec<f64>>,
    /// Documents retrieved by exactly one query-set member.
    pub unique_docs: Vec<UniqueCount>,
}

/// Diversity over explicit `(source, text)` members and their lists.
pub fn diversity_from_members(
    members: &[(QuerySource, String)],
    lists: &[RankedList],
) -> DiversityStats {
    let n = members.len();
    let mut matrix = vec![vec![1.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = jaccard(&members[i].1, &members[j].1);
            matrix[i][j] = v;
            matrix[j][i] = v;
        }
    }
    let tagged: Vec<RankedList> = lists
        .iter()
        .zip(members)
        .map(|(l, (src, _))| l.clone().with_source(src))
        .collect();
    let mut counts: HashMap<&QuerySource, usize> = HashMap::new();
    for cand in deduplicate(&tagged) {
        let first = &cand.doc.retrieved_by;
        if cand.contributing.iter().all(|c| &c.source == first) {
            if let Some((src, _)) = members.iter().find(|(s, _)| s == first) {
                *counts.entry(src).or_default() += 1;
            }
        }
    }
    DiversityStats {
        sources: members.iter().map(|(s, _)| s.clone()).collect(),
        jaccard: matrix,
        unique_docs: members
            .iter()
            .map(|(s, _)| UniqueCount {
                source: s.clone(),
                count: counts.get(s).copied().unwrap_or(0),
            })
            .collect(),
    }
}

/// Diversity of a query set given one list per member, in set order.
pub fn diversity_stats(query_set: &QuerySet, lists: &[RankedList]) -> DiversityStats {
    let members: Vec<(QuerySource, String)> = query_set
        .members()
        .map(|(s, t)| (s, t.to_string()))
        .collect();
    diversity_from_members(&members, lists)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_query_set, Document, Query, RewrittenQuery, StrategyId};
    use proptest::prelude::*;

    fn list(names: &[&str]) -> RankedList {
        RankedList::new(
            "q",
            names
                .iter()
                .map(|n| Document::new(*n, format!("content {n}"), None).unwrap())
                .collect(),
        )
    }

    fn set(texts: &[&str]) -> QuerySet {
        let original = Query::new("q", texts[0]).unwrap();
        let rewrites = texts[1..]
            .iter()
            .zip(StrategyId::DMQR.iter())
            .map(|(t, s)| RewrittenQuery::new(s.clone(), *t, original.clone()).unwrap())
            .collect();
        build_query_set(original, rewrites).unwrap()
    }

    #[test]
    fn jaccard_extremes() {
        assert_eq!(jaccard("Same words", "same WORDS"), 1.0);
        assert_eq!(jaccard("alpha beta", "gamma delta"), 0.0);
        assert_eq!(jaccard("a b", "b c"), 1.0 / 3.0);
    }

    #[test]
    fn identical_rewrites_have_unit_similarity() {
        let stats = diversity_stats(&set(&["orig", "same text", "same text"]), &[list(&[]), list(&[]), list(&[])]);
        assert_eq!(stats.jaccard[1][2], 1.0);
        assert_eq!(stats.jaccard[0][1], 0.0);
    }

    #[test]
    fn contained_list_has_no_unique_docs() {
        // member 2's list is a subset of the union of the other two
        let lists = [list(&["a", "b"]), list(&["c", "d"]), list(&["b", "c"])];
        let stats = diversity_stats(&set(&["x", "y", "z"]), &lists);
        let counts: Vec<usize> = stats.unique_docs.iter().map(|u| u.count).collect();
        assert_eq!(counts, vec![1, 1, 0]);
    }

    #[test]
    fn stopwatch_orders_and_measures() {
        let sw = Stopwatch::new();
        sw.time("b", || std::thread::sleep(std::time::Duration::from_millis(2)));
        sw.time("a", || ());
        let t = sw.finish();
        assert_eq!(t[0].stage, "b");
        assert!(t[0].wall_ms >= 1.0);
        assert!(t.iter().all(|s| s.end_ms >= s.start_ms));
    }

    #[test]
    fn sink_collects_from_threads() {
        let sink = EventSink::new(false);
        std::thread::scope(|s| {
            for i in 0..4 {
                let sink = &sink;
                s.spawn(move || sink.emit(Level::Info, "t", format!("{i}")));
            }
        });
        assert_eq!(sink.snapshot().len(), 4);
    }

    fn arb_lists() -> impl Strategy<Value = Vec<Vec<u8>>> {
        proptest::collection::vec(proptest::collection::vec(0u8..12, 0..6), 2..5)
    }

    fn to_lists(raw: &[Vec<u8>]) -> Vec<RankedList> {
        raw.iter()
            .map(|l| {
                let names: Vec<String> = l.iter().map(|n| format!("doc{n}")).collect();
                let refs: Vec<&str> = names.iter().map(String::as_str).collect();
                list(&refs)
            })
            .collect()
    }

    fn members(n: usize, texts: &[String]) -> Vec<(QuerySource, String)> {
        (0..n)
            .map(|i| {
                let src = if i == 0 {
                    QuerySource::Original
                } else {
                    QuerySource::Strategy(StrategyId::FusionVariant(i as u16))
                };
                (src, texts[i % texts.len()].clone())
            })
            .collect()
    }

    proptest! {
        #[test]
        fn matrix_symmetric_unit_diagonal(raw in arb_lists(), texts in proptest::collection::vec("[a-d ]{0,10}", 1..5)) {
            let lists = to_lists(&raw);
            let m = members(lists.len(), &texts);
            let stats = diversity_from_members(&m, &lists);
            for i in 0..lists.len() {
                prop_assert_eq!(stats.jaccard[i][i], 1.0);
                for j in 0..lists.len() {
                    prop_assert_eq!(stats.jaccard[i][j], stats.jaccard[j][i]);
                    prop_assert!((0.0..=1.0).contains(&stats.jaccard[i][j]));
                }
            }
            let survivors = deduplicate(&lists).len();
            let total: usize = stats.unique_docs.iter().map(|u| u.count).sum();
            prop_assert!(total <= survivors);
        }

        #[test]
        fn removing_a_list_never_reduces_others_uniques(raw in arb_lists(), drop in 0usize..5) {
            let lists = to_lists(&raw);
            let drop = drop % lists.len();
            let texts = vec!["t".to_string()];
            let m = members(lists.len(), &texts);
            let full = diversity_from_members(&m, &lists);
            let kept: Vec<usize> = (0..lists.len()).filter(|&i| i != drop).collect();
            let sub_lists: Vec<_> = kept.iter().map(|&i| lists[i].clone()).collect();
            let sub_members: Vec<_> = kept.iter().map(|&i| m[i].clone()).collect();
            let reduced = diversity_from_members(&sub_members, &sub_lists);
            for (pos, &i) in kept.iter().enumerate() {
                prop_assert!(full.unique_docs[i].count <= reduced.unique_docs[pos].count);
            }
        }
    }
}
