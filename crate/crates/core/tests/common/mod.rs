//! Random corpora, random queries and a brute-force scorer used as the
//! reference for ranking tests.
//!
//! The scorer never touches the engine's index structures. It rescans every
//! raw document for every query, counting term frequencies and document
//! frequencies from scratch, and applies
//! `score = Σ boost · tf · idf²` with `idf = 1 + ln((N + 1) / (df + 1))`.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde_json::{json, Map, Value};
use sqe_core::analysis::AnalyzerConfig;
use sqe_core::mapping::validate_index_request;
use sqe_core::querydsl::parse_query;
use sqe_core::retriever::execute;
use sqe_core::store::IndexState;

pub const TYPE: &str = "doc";

pub const WORDS: &[&str] = &[
    "apple", "Apple", "banana", "the", "cherry", "grape-fruit", "kiwi", "lemon", "Mango", "and", "x1", "bomb", "a",
    "KIWI", "of",
];
pub const KEYWORDS: &[&str] = &["red", "blue", "Green", "dark blue"];
const ANALYZERS: &[&str] = &["standard", "whitespace", "simple", "n_gram"];

#[derive(Debug, Clone)]
pub enum FieldKind {
    Text { analyzer: &'static str, search: Option<&'static str> },
    Keyword,
    Float,
}

#[derive(Debug, Clone)]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldKind,
}

#[derive(Debug, Clone)]
pub struct Leaf {
    pub kind: &'static str,
    pub field: String,
    pub value: String,
    pub boost: f64,
}

#[derive(Debug, Clone)]
pub struct Range {
    pub field: String,
    pub bounds: Vec<(&'static str, f64)>,
}

impl Range {
    fn matches(&self, v: f64) -> bool {
        self.bounds.iter().all(|&(op, b)| match op {
            "gt" => v > b,
            "gte" => v >= b,
            "lt" => v < b,
            _ => v <= b,
        })
    }
}

#[derive(Debug, Clone)]
pub enum Query {
    Leaf(Leaf),
    Bool { should: Vec<Leaf>, filter: Vec<Range> },
}

fn leaf_json(l: &Leaf) -> Value {
    let key = if l.kind == "term" { "value" } else { "query" };
    json!({ l.kind: { l.field.clone(): { key: l.value, "boost": l.boost } } })
}

impl Query {
    pub fn to_json(&self, size: usize) -> Value {
        let query = match self {
            Query::Leaf(l) => leaf_json(l),
            Query::Bool { should, filter } => {
                let mut b = Map::new();
                if !should.is_empty() {
                    b.insert("should".into(), should.iter().map(leaf_json).collect());
                }
                if !filter.is_empty() {
                    let f: Vec<Value> = filter
                        .iter()
                        .map(|r| {
                            let bounds: Map<String, Value> =
                                r.bounds.iter().map(|(op, v)| (op.to_string(), json!(v))).collect();
                            json!({"range": { r.field.clone(): bounds }})
                        })
                        .collect();
                    b.insert("filter".into(), f.into());
                }
                json!({ "bool": b })
            }
        };
        json!({ "query": query, "size": size })
    }
}

pub fn random_fields(rng: &mut impl Rng) -> Vec<FieldSpec> {
    let n = rng.random_range(2..=5);
    let mut fields = Vec::with_capacity(n);
    for i in 0..n {
        let kind = match rng.random_range(0..6) {
            0 => FieldKind::Keyword,
            1 => FieldKind::Float,
            _ => text_kind(rng),
        };
        fields.push(FieldSpec { name: format!("f{i}"), kind });
    }
    if !fields.iter().any(|f| matches!(f.kind, FieldKind::Text { .. })) {
        fields[0].kind = text_kind(rng);
    }
    fields
}

fn text_kind(rng: &mut impl Rng) -> FieldKind {
    let analyzer = *ANALYZERS.choose(rng).unwrap();
    let search = if rng.random_bool(0.2) { Some(*ANALYZERS.choose(rng).unwrap()) } else { None };
    FieldKind::Text { analyzer, search }
}

pub fn mapping_body(fields: &[FieldSpec], shards: u32) -> Value {
    let props: Map<String, Value> = fields
        .iter()
        .map(|f| {
            let m = match &f.kind {
                FieldKind::Text { analyzer, search } => {
                    let mut m = json!({"type": "text", "analyzer": analyzer});
                    if let Some(s) = search {
                        m["search_analyzer"] = json!(s);
                    }
                    m
                }
                FieldKind::Keyword => json!({"type": "keyword"}),
                FieldKind::Float => json!({"type": "float"}),
            };
            (f.name.clone(), m)
        })
        .collect();
    json!({"settings": {"number_of_shards": shards}, "mappings": { TYPE: {"properties": props} }})
}

fn random_text(rng: &mut impl Rng) -> String {
    let n = rng.random_range(0..6);
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

pub fn random_doc(rng: &mut impl Rng, fields: &[FieldSpec]) -> Value {
    let mut doc = Map::new();
    for f in fields {
        if rng.random_bool(0.15) {
            continue;
        }
        let v = match f.kind {
            FieldKind::Text { .. } if rng.random_bool(0.2) => json!([random_text(rng), random_text(rng)]),
            FieldKind::Text { .. } => json!(random_text(rng)),
            FieldKind::Keyword => json!(*KEYWORDS.choose(rng).unwrap()),
            FieldKind::Float => json!(rng.random_range(0..=100) as f64 / 10.0),
        };
        doc.insert(f.name.clone(), v);
    }
    Value::Object(doc)
}

pub fn random_corpus(rng: &mut impl Rng, fields: &[FieldSpec], max_docs: usize) -> Vec<(String, Value)> {
    let n = rng.random_range(0..=max_docs);
    (0..n).map(|i| (format!("d{i:02}"), random_doc(rng, fields))).collect()
}

const BOOSTS: &[f64] = &[0.5, 1.0, 1.0, 2.0, 3.0];

fn random_leaf(rng: &mut impl Rng, fields: &[FieldSpec]) -> Leaf {
    let queryable: Vec<&FieldSpec> = fields.iter().filter(|f| !matches!(f.kind, FieldKind::Float)).collect();
    let field = *queryable.choose(rng).unwrap();
    let (kind, value) = match field.kind {
        FieldKind::Keyword => (
            if rng.random_bool(0.5) { "term" } else { "match" },
            KEYWORDS.choose(rng).unwrap().to_string(),
        ),
        _ if rng.random_bool(0.3) => ("term", WORDS.choose(rng).unwrap().to_string()),
        _ => ("match", random_text(rng)),
    };
    Leaf {
        kind,
        field: field.name.clone(),
        value,
        boost: *BOOSTS.choose(rng).unwrap(),
    }
}

fn random_range(rng: &mut impl Rng, field: &str) -> Range {
    let lower = *["gt", "gte"].choose(rng).unwrap();
    let upper = *["lt", "lte"].choose(rng).unwrap();
    let picked = match rng.random_range(0..3) {
        0 => vec![lower],
        1 => vec![upper],
        _ => vec![lower, upper],
    };
    let bounds = picked
        .into_iter()
        .map(|op| (op, rng.random_range(0..=100) as f64 / 10.0))
        .collect();
    Range { field: field.to_string(), bounds }
}

pub fn random_query(rng: &mut impl Rng, fields: &[FieldSpec]) -> Query {
    if rng.random_bool(0.2) {
        return Query::Leaf(random_leaf(rng, fields));
    }
    let floats: Vec<&str> = fields
        .iter()
        .filter(|f| matches!(f.kind, FieldKind::Float))
        .map(|f| f.name.as_str())
        .collect();
    let n_filter = if floats.is_empty() { 0 } else { rng.random_range(0..=2) };
    let min_should = if n_filter == 0 { 1 } else { 0 };
    let should = (0..rng.random_range(min_should..=4)).map(|_| random_leaf(rng, fields)).collect();
    let filter = (0..n_filter)
        .map(|_| {
            let field = *floats.choose(rng).unwrap();
            random_range(rng, field)
        })
        .collect();
    Query::Bool { should, filter }
}

fn scalar_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => n.as_f64().map(|f| format!("{f}")),
        _ => None,
    }
}

fn field_strings(doc: &Value, field: &str) -> Vec<String> {
    match doc.get(field) {
        Some(Value::Array(items)) => items.iter().filter_map(scalar_string).collect(),
        Some(v) => scalar_string(v).into_iter().collect(),
        None => Vec::new(),
    }
}

fn tokens(analyzer: &str, text: &str) -> Vec<String> {
    AnalyzerConfig::by_name(analyzer)
        .unwrap()
        .analyze(text)
        .into_iter()
        .map(|t| t.term)
        .collect()
}

/// Term frequencies of one field of one raw document.
pub fn doc_terms(spec: &FieldSpec, doc: &Value) -> BTreeMap<String, u32> {
    let mut tf = BTreeMap::new();
    for s in field_strings(doc, &spec.name) {
        let terms = match spec.kind {
            FieldKind::Text { analyzer, .. } => tokens(analyzer, &s),
            _ => vec![s],
        };
        for t in terms {
            *tf.entry(t).or_insert(0) += 1;
        }
    }
    tf
}

fn query_terms(spec: &FieldSpec, leaf: &Leaf) -> Vec<String> {
    let raw = match (&spec.kind, leaf.kind) {
        (FieldKind::Text { analyzer, search }, "match") => tokens(search.unwrap_or(analyzer), &leaf.value),
        _ => vec![leaf.value.clone()],
    };
    let mut seen = BTreeSet::new();
    raw.into_iter().filter(|t| seen.insert(t.clone())).collect()
}

/// Brute-force ranking: `(id, score)` ordered by score desc, then id.
pub fn oracle(fields: &[FieldSpec], docs: &[(String, Value)], query: &Query) -> Vec<(String, f64)> {
    let n = docs.len() as f64;
    let spec = |name: &str| fields.iter().find(|f| f.name == name).unwrap();
    let leaf_score = |leaf: &Leaf, doc: &Value| -> f64 {
        let s = spec(&leaf.field);
        let tf = doc_terms(s, doc);
        query_terms(s, leaf)
            .iter()
            .map(|t| {
                let f = *tf.get(t).unwrap_or(&0) as f64;
                if f == 0.0 {
                    return 0.0;
                }
                let df = docs.iter().filter(|(_, d)| doc_terms(s, d).contains_key(t)).count() as f64;
                let idf = 1.0 + ((n + 1.0) / (df + 1.0)).ln();
                leaf.boost * f * idf * idf
            })
            .sum()
    };
    let in_range = |r: &Range, doc: &Value| doc.get(&r.field).and_then(Value::as_f64).is_some_and(|v| r.matches(v));

    let mut out: Vec<(String, f64)> = docs
        .iter()
        .filter_map(|(id, doc)| {
            let score = match query {
                Query::Leaf(l) => leaf_score(l, doc),
                Query::Bool { should, filter } => {
                    if !filter.iter().all(|r| in_range(r, doc)) {
                        return None;
                    }
                    if should.is_empty() {
                        1.0
                    } else {
                        should.iter().map(|l| leaf_score(l, doc)).sum()
                    }
                }
            };
            (score > 0.0).then(|| (id.clone(), score))
        })
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

pub fn build_state(fields: &[FieldSpec], docs: &[(String, Value)], shards: u32) -> IndexState {
    let meta = validate_index_request("rand", &mapping_body(fields, shards)).unwrap();
    let mut state = IndexState::new(Arc::new(meta));
    for (id, doc) in docs {
        state.add(TYPE, Some(id), doc.clone()).unwrap();
    }
    state
}

/// Runs `query` through the engine with room for every hit.
pub fn engine_ranking(state: &IndexState, query: &Query) -> Vec<(String, f64)> {
    let ast = parse_query(&query.to_json(10_000), state.meta()).unwrap();
    execute(state, Some(TYPE), &ast)
        .unwrap()
        .hits
        .into_iter()
        .map(|h| (h.id, h.score))
        .collect()
}

pub fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1e-300)
}

/// Compares an engine ranking with the oracle's; returns a description of
/// the first difference.
pub fn compare_rankings(engine: &[(String, f64)], oracle: &[(String, f64)]) -> Result<(), String> {
    if engine.len() != oracle.len() {
        return Err(format!("hit count {} != oracle {}", engine.len(), oracle.len()));
    }
    let expected: BTreeMap<&str, f64> = oracle.iter().map(|(id, s)| (id.as_str(), *s)).collect();
    for (id, score) in engine {
        match expected.get(id.as_str()) {
            Some(e) if close(*e, *score) => {}
            Some(e) => return Err(format!("{id}: score {score} != oracle {e}")),
            None => return Err(format!("{id} not in oracle hits")),
        }
    }
    for pair in engine.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let ordered = a.1 > b.1 || (a.1 == b.1 && a.0 < b.0);
        if !ordered {
            return Err(format!("{a:?} ranked above {b:?}"));
        }
    }
    Ok(())
}
