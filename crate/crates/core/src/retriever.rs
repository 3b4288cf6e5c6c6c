//! TF-IDF retrieval over an index's shared stores.
//!
//! Each leaf clause targets one field. Its query vector has one dimension
//! per distinct query term, `boost * idf(t)`; a document's vector has
//! `tf(t, d) * idf(t)`. The clause score of a document is the inner product
//! of the two, and a bool query sums clause scores across its `should`
//! list before applying range filters.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde_json::{json, Value};
use thiserror::Error;

use crate::mapping::values_at_path;
use crate::querydsl::{analyze_leaf, LeafClause, QueryAst, QueryRoot, RangeClause};
use crate::store::{shard_of, IndexState};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RetrieveError {
    #[error("type [{0}] does not exist in this index")]
    UnknownType(String),
}

/// Smoothed inverse document frequency, `1 + ln((N + 1) / (df + 1))`.
pub fn idf(df: u64, num_docs: u64) -> f64 {
    1.0 + ((num_docs as f64 + 1.0) / (df as f64 + 1.0)).ln()
}

/// Corpus statistics of one (index, type) scope. Documents pending deletion
/// are excluded from both N and df.
pub struct ScoringContext<'a> {
    state: &'a IndexState,
    type_name: &'a str,
    num_docs: u64,
}

impl<'a> ScoringContext<'a> {
    pub fn new(state: &'a IndexState, type_name: &'a str) -> Self {
        ScoringContext {
            state,
            type_name,
            num_docs: state.live_type_docs(type_name),
        }
    }

    pub fn num_docs(&self) -> u64 {
        self.num_docs
    }

    /// Live document frequency summed over all shards.
    pub fn df(&self, field: &str, term: &str) -> u64 {
        let shards = self.state.inverted().shards(self.type_name);
        let stored: u64 = shards
            .iter()
            .filter_map(|s| s.posting(field, term))
            .map(|p| p.doc_frequency)
            .sum();
        if stored == 0 {
            return 0;
        }
        let pending = self
            .state
            .deletions()
            .ids(self.type_name)
            .filter(|id| {
                shards
                    .get(shard_of(id, shards.len()))
                    .and_then(|s| s.posting(field, term))
                    .is_some_and(|p| p.postings.contains_key(*id))
            })
            .count() as u64;
        stored - pending
    }

    pub fn idf(&self, field: &str, term: &str) -> f64 {
        idf(self.df(field, term), self.num_docs)
    }
}

/// Scores every live document that contains at least one query term of the
/// clause: `sum over t of boost * tf * idf(t)^2`.
pub fn score_leaf(clause: &LeafClause, ctx: &ScoringContext<'_>) -> HashMap<String, f64> {
    let mut scores: HashMap<String, f64> = HashMap::new();
    let deletions = ctx.state.deletions();
    for (term, weight) in analyze_leaf(clause, ctx.state.meta()) {
        let idf = ctx.idf(&clause.field, &term);
        for shard in ctx.state.inverted().shards(ctx.type_name) {
            let Some(entry) = shard.posting(&clause.field, &term) else {
                continue;
            };
            for (id, &tf) in &entry.postings {
                if deletions.contains(ctx.type_name, id) {
                    continue;
                }
                *scores.entry(id.clone()).or_insert(0.0) += weight * f64::from(tf) * idf * idf;
            }
        }
    }
    scores
}

/// Whether any numeric value stored at the clause's field satisfies it.
pub fn range_matches(clause: &RangeClause, source: &Value) -> bool {
    values_at_path(source, &clause.field).into_iter().any(|v| match v.as_f64() {
        Some(n) => clause.matches(n),
        None => {
            log::warn!("non-numeric value {v} in range field [{}]", clause.field);
            false
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchHit {
    pub index: String,
    pub type_name: String,
    pub id: String,
    pub score: f64,
    pub source: Value,
}

impl SearchHit {
    pub fn to_json(&self) -> Value {
        json!({
            "_index": self.index,
            "_type": self.type_name,
            "_id": self.id,
            "_score": self.score,
            "_source": self.source,
        })
    }
}

/// Ranking order: score descending, then id, index and type ascending.
pub fn hit_order(a: &SearchHit, b: &SearchHit) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.id.cmp(&b.id))
        .then_with(|| a.index.cmp(&b.index))
        .then_with(|| a.type_name.cmp(&b.type_name))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResponse {
    pub took_ms: u64,
    pub total: u64,
    pub hits: Vec<SearchHit>,
}

impl SearchResponse {
    pub fn empty() -> Self {
        SearchResponse {
            took_ms: 0,
            total: 0,
            hits: Vec::new(),
        }
    }

    pub fn max_score(&self) -> Option<f64> {
        self.hits.first().map(|h| h.score)
    }

    /// Merges several responses into one ranked list of at most `size` hits.
    pub fn merge(parts: impl IntoIterator<Item = SearchResponse>, size: usize) -> Self {
        let mut total = 0;
        let mut hits = Vec::new();
        for part in parts {
            total += part.total;
            hits.extend(part.hits);
        }
        hits.sort_by(hit_order);
        hits.truncate(size);
        SearchResponse {
            took_ms: 0,
            total,
            hits,
        }
    }

    pub fn to_json(&self) -> Value {
        json!({
            "took": self.took_ms,
            "hits": {
                "total": self.total,
                "max_score": self.max_score(),
                "hits": self.hits.iter().map(SearchHit::to_json).collect::<Vec<_>>(),
            }
        })
    }
}

/// Scores one type of an index, returning every matching (id, score).
pub fn score_type(state: &IndexState, type_name: &str, ast: &QueryAst) -> Vec<(String, f64)> {
    let ctx = ScoringContext::new(state, type_name);
    match &ast.root {
        QueryRoot::Leaf(leaf) => score_leaf(leaf, &ctx).into_iter().collect(),
        QueryRoot::Bool(b) => {
            let candidates: Vec<(String, f64)> = if b.should.is_empty() {
                state
                    .live_documents(type_name)
                    .map(|(id, _)| (id.to_string(), 1.0))
                    .collect()
            } else {
                let mut totals: HashMap<String, f64> = HashMap::new();
                for clause in &b.should {
                    for (id, s) in score_leaf(clause, &ctx) {
                        *totals.entry(id).or_insert(0.0) += s;
                    }
                }
                totals.into_iter().collect()
            };
            if b.filter.is_empty() {
                return candidates;
            }
            candidates
                .into_iter()
                .filter(|(id, _)| {
                    state
                        .get(type_name, id)
                        .is_some_and(|src| b.filter.iter().all(|f| range_matches(f, src)))
                })
                .collect()
        }
    }
}

/// Runs a query against one type, or every type when `type_name` is `None`.
pub fn execute(state: &IndexState, type_name: Option<&str>, ast: &QueryAst) -> Result<SearchResponse, RetrieveError> {
    let meta = state.meta();
    let types: Vec<&str> = match type_name {
        Some(t) if meta.has_type(t) => vec![t],
        Some(t) => return Err(RetrieveError::UnknownType(t.to_string())),
        None => meta.types.iter().map(String::as_str).collect(),
    };
    let mut hits = Vec::new();
    for t in types {
        for (id, score) in score_type(state, t, ast) {
            hits.push(SearchHit {
                index: meta.name.clone(),
                type_name: t.to_string(),
                id,
                score,
                source: Value::Null,
            });
        }
    }
    let total = hits.len() as u64;
    hits.sort_by(hit_order);
    hits.truncate(ast.size);
    for hit in &mut hits {
        hit.source = state.get(&hit.type_name, &hit.id).cloned().unwrap_or(Value::Null);
    }
    Ok(SearchResponse {
        took_ms: 0,
        total,
        hits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::validate_index_request;
    use crate::querydsl::parse_query;
    use std::sync::Arc;

    fn state(shards: u32) -> IndexState {
        IndexState::new(Arc::new(
            validate_index_request(
                "movies",
                &json!({"settings": {"number_of_shards": shards}, "mappings": {"movie": {"properties": {
                    "movie_title": {"type": "text"},
                    "plot_keywords": {"type": "text"},
                    "genres": {"type": "text"},
                    "imdb_score": {"type": "float"}
                }}}}),
            )
            .unwrap(),
        ))
    }

    fn run(state: &IndexState, body: Value) -> SearchResponse {
        let ast = parse_query(&body, state.meta()).unwrap();
        execute(state, Some("movie"), &ast).unwrap()
    }

    #[test]
    fn idf_values() {
        assert_eq!(idf(5, 5), 1.0);
        assert_eq!(idf(0, 0), 1.0);
        assert!((idf(1, 3) - 1.693_147_180_559_945_4).abs() < 1e-12);
        assert_eq!(idf(0, 7), 1.0 + 8f64.ln());
    }

    #[test]
    fn single_doc_score() {
        let mut s = state(1);
        s.add("movie", Some("1"), json!({"plot_keywords": "bomb"})).unwrap();
        let r = run(&s, json!({"query": {"match": {"plot_keywords": "human bomb"}}}));
        assert_eq!(r.total, 1);
        assert_eq!(r.hits[0].score, 1.0);
        assert_eq!(r.max_score(), Some(1.0));
    }

    #[test]
    fn boost_is_linear() {
        let mut s = state(2);
        for (i, kw) in ["bomb human", "bomb bomb", "human"].iter().enumerate() {
            s.add("movie", Some(&i.to_string()), json!({"plot_keywords": kw})).unwrap();
        }
        let one = run(&s, json!({"query": {"match": {"plot_keywords": "human bomb"}}}));
        let two = run(&s, json!({"query": {"match": {"plot_keywords": {"query": "human bomb", "boost": 2.0}}}}));
        assert_eq!(one.hits.len(), 3);
        for (a, b) in one.hits.iter().zip(&two.hits) {
            assert_eq!(a.id, b.id);
            assert_eq!(b.score, 2.0 * a.score);
        }
        assert_eq!(run(&s, json!({"query": {"match": {"plot_keywords": "zebra"}}})).total, 0);
    }

    #[test]
    fn filter_excludes_low_scores() {
        let mut s = state(1);
        s.add("movie", Some("a"), json!({"genres": "Action", "imdb_score": 7.2})).unwrap();
        s.add("movie", Some("b"), json!({"genres": "Action", "imdb_score": 5.9})).unwrap();
        s.add("movie", Some("c"), json!({"genres": "Drama", "imdb_score": 8.0})).unwrap();
        let r = run(
            &s,
            json!({"query": {"bool": {"should": [{"match": {"genres": "action"}}],
                "filter": [{"range": {"imdb_score": {"gte": 6.0}}}]}}}),
        );
        assert_eq!(r.hits.iter().map(|h| h.id.as_str()).collect::<Vec<_>>(), ["a"]);

        let r = run(&s, json!({"query": {"bool": {"filter": [{"range": {"imdb_score": {"gte": 0}}}]}}}));
        assert_eq!(r.total, 3);
        assert!(r.hits.iter().all(|h| h.score == 1.0));
        assert_eq!(r.hits.iter().map(|h| h.id.as_str()).collect::<Vec<_>>(), ["a", "b", "c"]);
    }

    #[test]
    fn more_matching_clauses_rank_higher() {
        let mut s = state(1);
        s.add("movie", Some("a"), json!({"genres": "action", "plot_keywords": "bomb"})).unwrap();
        s.add("movie", Some("b"), json!({"genres": "action", "plot_keywords": "car"})).unwrap();
        let r = run(
            &s,
            json!({"query": {"bool": {"should": [
                {"match": {"genres": "action"}}, {"match": {"plot_keywords": "bomb"}}]}}}),
        );
        assert_eq!(r.hits[0].id, "a");
        assert!(r.hits[0].score > r.hits[1].score);
    }

    #[test]
    fn pending_deletions_are_invisible() {
        let mut s = state(3);
        for i in 0..6 {
            s.add("movie", Some(&i.to_string()), json!({"genres": "action"})).unwrap();
        }
        s.delete("movie", "2").unwrap();
        let ctx = ScoringContext::new(&s, "movie");
        assert_eq!(ctx.num_docs(), 5);
        assert_eq!(ctx.df("genres", "action"), 5);
        let r = run(&s, json!({"query": {"match": {"genres": "action"}}, "size": 50}));
        assert_eq!(r.total, 5);
        assert!(r.hits.iter().all(|h| h.id != "2"));
    }

    #[test]
    fn range_on_missing_and_array_values() {
        let clause = RangeClause {
            field: "imdb_score".into(),
            gte: Some(6.0),
            ..Default::default()
        };
        assert!(!range_matches(&clause, &json!({})));
        assert!(range_matches(&clause, &json!({"imdb_score": [1, 7]})));
        assert!(!range_matches(&clause, &json!({"imdb_score": "7"})));
    }

    #[test]
    fn unknown_type() {
        let s = state(1);
        let ast = parse_query(&json!({"query": {"match": {"genres": "x"}}}), s.meta()).unwrap();
        assert_eq!(
            execute(&s, Some("show"), &ast),
            Err(RetrieveError::UnknownType("show".into()))
        );
    }

    #[test]
    fn response_envelope() {
        let r = SearchResponse::empty();
        assert_eq!(
            r.to_json(),
            json!({"took": 0, "hits": {"total": 0, "max_score": null, "hits": []}})
        );
    }
}
