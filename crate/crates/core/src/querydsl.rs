//! JSON query DSL.
//!
//! Accepted grammar, one level deep:
//!
//! ```text
//! {"query": LEAF | BOOL, "size": n}
//! LEAF  = {"term":  {field: value | {"value": value, "boost": b}}}
//!       | {"match": {field: value | {"query": value, "boost": b}}}
//! BOOL  = {"bool": {"should": [LEAF, ...], "filter": [RANGE, ...]}}
//! RANGE = {"range": {field: {"gt"|"gte"|"lt"|"lte": number, ...}}}
//! ```
//!
//! `should` clauses score and are OR-ed; `filter` clauses only restrict.

use std::collections::HashSet;
use std::fmt;

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::analysis::resolve_analyzers;
use crate::mapping::{query_term, DataType, IndexMeta};

pub const DEFAULT_SIZE: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QueryError {
    #[error("malformed query: {0}")]
    Malformed(String),
    #[error("unknown query clause [{0}]")]
    UnknownClause(String),
    #[error("[range] is only supported inside bool.filter; leaf queries do not support range filters")]
    RangeAtLeaf,
    #[error("[{0}] clauses are not supported; use should and filter")]
    UnsupportedBoolSection(String),
    #[error("bool queries cannot be nested inside bool")]
    NestedBool,
    #[error("only range clauses are supported inside bool.filter, found [{0}]")]
    UnsupportedFilter(String),
    #[error("bool query needs at least one should or filter clause")]
    EmptyBool,
    #[error("no such field [{0}] in the index mapping")]
    UnknownField(String),
    #[error("field [{0}] is not indexed")]
    FieldNotIndexed(String),
    #[error("range on field [{field}] requires a numeric field, found [{datatype}]")]
    NonNumericRange { field: String, datatype: DataType },
    #[error("boost must be a positive number, got {0}")]
    InvalidBoost(String),
    #[error("invalid value {value} for field [{field}] of type [{datatype}]")]
    InvalidValue {
        field: String,
        datatype: DataType,
        value: String,
    },
    #[error("invalid range on [{field}]: {reason}")]
    InvalidRange { field: String, reason: String },
    #[error("size must be a positive integer, got {0}")]
    InvalidSize(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeafKind {
    Term,
    Match,
}

impl LeafKind {
    pub fn name(self) -> &'static str {
        match self {
            LeafKind::Term => "term",
            LeafKind::Match => "match",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeafClause {
    pub kind: LeafKind,
    pub field: String,
    /// A JSON string or number.
    pub query: Value,
    pub boost: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RangeClause {
    pub field: String,
    pub gt: Option<f64>,
    pub gte: Option<f64>,
    pub lt: Option<f64>,
    pub lte: Option<f64>,
}

impl RangeClause {
    /// Conjunction of all present bounds.
    pub fn matches(&self, value: f64) -> bool {
        self.gt.is_none_or(|b| value > b)
            && self.gte.is_none_or(|b| value >= b)
            && self.lt.is_none_or(|b| value < b)
            && self.lte.is_none_or(|b| value <= b)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoolClause {
    pub should: Vec<LeafClause>,
    pub filter: Vec<RangeClause>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum QueryRoot {
    Leaf(LeafClause),
    Bool(BoolClause),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryAst {
    pub root: QueryRoot,
    pub size: usize,
}

impl fmt::Display for QueryAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_json())
    }
}

pub fn parse_query(body: &Value, meta: &IndexMeta) -> Result<QueryAst, QueryError> {
    parse_query_with_size(body, meta, DEFAULT_SIZE)
}

/// Like [`parse_query`] with a caller-chosen default for a missing `size`.
pub fn parse_query_with_size(body: &Value, meta: &IndexMeta, default_size: usize) -> Result<QueryAst, QueryError> {
    let obj = body
        .as_object()
        .ok_or_else(|| QueryError::Malformed("request body must be a JSON object".into()))?;
    if let Some(key) = obj.keys().find(|k| !matches!(k.as_str(), "query" | "size")) {
        return Err(QueryError::Malformed(format!("unsupported request key [{key}]")));
    }
    let size = match obj.get("size") {
        None => default_size,
        Some(v) => match v.as_u64() {
            Some(n) if n > 0 => n as usize,
            _ => return Err(QueryError::InvalidSize(v.to_string())),
        },
    };
    let query = obj
        .get("query")
        .ok_or_else(|| QueryError::Malformed("missing [query]".into()))?;
    let (name, inner) = single_entry(query, "query")?;
    let root = match name {
        "bool" => QueryRoot::Bool(parse_bool(inner, meta)?),
        "range" => return Err(QueryError::RangeAtLeaf),
        _ => QueryRoot::Leaf(parse_leaf(name, inner, meta)?),
    };
    Ok(QueryAst { root, size })
}

fn single_entry<'a>(value: &'a Value, what: &str) -> Result<(&'a str, &'a Value), QueryError> {
    let obj = value
        .as_object()
        .ok_or_else(|| QueryError::Malformed(format!("[{what}] must be an object")))?;
    let mut iter = obj.iter();
    match (iter.next(), iter.next()) {
        (Some((k, v)), None) => Ok((k.as_str(), v)),
        (None, _) => Err(QueryError::Malformed(format!("[{what}] is empty"))),
        _ => Err(QueryError::Malformed(format!("[{what}] must contain exactly one entry"))),
    }
}

fn parse_bool(value: &Value, meta: &IndexMeta) -> Result<BoolClause, QueryError> {
    let obj = value
        .as_object()
        .ok_or_else(|| QueryError::Malformed("[bool] must be an object".into()))?;
    let mut clause = BoolClause::default();
    for (section, body) in obj {
        match section.as_str() {
            "should" => {
                for item in as_list(body) {
                    let (name, inner) = single_entry(item, "should")?;
                    match name {
                        "bool" => return Err(QueryError::NestedBool),
                        "range" => return Err(QueryError::UnsupportedFilter("range in should".into())),
                        _ => clause.should.push(parse_leaf(name, inner, meta)?),
                    }
                }
            }
            "filter" => {
                for item in as_list(body) {
                    let (name, inner) = single_entry(item, "filter")?;
                    match name {
                        "range" => clause.filter.push(parse_range(inner, meta)?),
                        "bool" => return Err(QueryError::NestedBool),
                        other => return Err(QueryError::UnsupportedFilter(other.to_string())),
                    }
                }
            }
            "must" | "must_not" => return Err(QueryError::UnsupportedBoolSection(section.clone())),
            other => return Err(QueryError::Malformed(format!("unknown bool section [{other}]"))),
        }
    }
    if clause.should.is_empty() && clause.filter.is_empty() {
        return Err(QueryError::EmptyBool);
    }
    Ok(clause)
}

fn as_list(value: &Value) -> Vec<&Value> {
    match value {
        Value::Array(items) => items.iter().collect(),
        other => vec![other],
    }
}

fn parse_leaf(kind: &str, value: &Value, meta: &IndexMeta) -> Result<LeafClause, QueryError> {
    let kind = match kind {
        "term" => LeafKind::Term,
        "match" => LeafKind::Match,
        other => return Err(QueryError::UnknownClause(other.to_string())),
    };
    let (field, spec) = single_entry(value, kind.name())?;
    let query_key = match kind {
        LeafKind::Term => "value",
        LeafKind::Match => "query",
    };
    let (query, boost) = match spec {
        Value::Object(params) => {
            if let Some(key) = params.keys().find(|k| *k != query_key && *k != "boost") {
                return Err(QueryError::Malformed(format!(
                    "unknown parameter [{key}] in [{}] clause",
                    kind.name()
                )));
            }
            let query = params.get(query_key).ok_or_else(|| {
                QueryError::Malformed(format!("[{}] on [{field}] is missing [{query_key}]", kind.name()))
            })?;
            let boost = match params.get("boost") {
                None => 1.0,
                Some(b) => match b.as_f64() {
                    Some(b) if b > 0.0 && b.is_finite() => b,
                    _ => return Err(QueryError::InvalidBoost(b.to_string())),
                },
            };
            (query.clone(), boost)
        }
        other => (other.clone(), 1.0),
    };

    let mapping = meta
        .field(field)
        .ok_or_else(|| QueryError::UnknownField(field.to_string()))?;
    if !mapping.index {
        return Err(QueryError::FieldNotIndexed(field.to_string()));
    }
    let valid = match &query {
        Value::String(_) | Value::Number(_) => query_term(mapping.datatype, &query).is_some(),
        _ => false,
    };
    if !valid {
        return Err(QueryError::InvalidValue {
            field: field.to_string(),
            datatype: mapping.datatype,
            value: query.to_string(),
        });
    }
    Ok(LeafClause {
        kind,
        field: field.to_string(),
        query,
        boost,
    })
}

fn parse_range(value: &Value, meta: &IndexMeta) -> Result<RangeClause, QueryError> {
    let (field, bounds) = single_entry(value, "range")?;
    let mapping = meta
        .field(field)
        .ok_or_else(|| QueryError::UnknownField(field.to_string()))?;
    if !mapping.datatype.is_numeric() {
        return Err(QueryError::NonNumericRange {
            field: field.to_string(),
            datatype: mapping.datatype,
        });
    }
    let invalid = |reason: String| QueryError::InvalidRange {
        field: field.to_string(),
        reason,
    };
    let bounds = bounds
        .as_object()
        .ok_or_else(|| invalid("bounds must be an object".into()))?;
    let mut clause = RangeClause {
        field: field.to_string(),
        ..RangeClause::default()
    };
    for (op, v) in bounds {
        let n = v
            .as_f64()
            .filter(|n| n.is_finite())
            .ok_or_else(|| invalid(format!("[{op}] must be a number, got {v}")))?;
        let slot = match op.as_str() {
            "gt" => &mut clause.gt,
            "gte" => &mut clause.gte,
            "lt" => &mut clause.lt,
            "lte" => &mut clause.lte,
            other => return Err(invalid(format!("unknown bound [{other}]"))),
        };
        *slot = Some(n);
    }
    if clause.gt.is_some() && clause.gte.is_some() {
        return Err(invalid("gt and gte are mutually exclusive".into()));
    }
    if clause.lt.is_some() && clause.lte.is_some() {
        return Err(invalid("lt and lte are mutually exclusive".into()));
    }
    // an inverted range is legal and simply matches nothing
    if clause.gt.or(clause.gte).is_none() && clause.lt.or(clause.lte).is_none() {
        return Err(invalid("at least one bound is required".into()));
    }
    Ok(clause)
}

/// Query terms of a leaf clause, each weighted by the clause boost.
///
/// `match` runs the field's search analyzer; `term` and non-text fields use
/// the value verbatim. Repeated terms collapse to one vector dimension.
pub fn analyze_leaf(clause: &LeafClause, meta: &IndexMeta) -> Vec<(String, f64)> {
    let Some(field) = meta.field(&clause.field) else {
        return Vec::new();
    };
    let terms: Vec<String> = match (clause.kind, field.datatype) {
        (LeafKind::Match, DataType::Text) => {
            let text = match &clause.query {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            resolve_analyzers(field)
                .1
                .analyze(&text)
                .into_iter()
                .map(|t| t.term)
                .collect()
        }
        (_, DataType::Text) => query_term(DataType::Keyword, &clause.query).into_iter().collect(),
        (_, datatype) => query_term(datatype, &clause.query).into_iter().collect(),
    };
    let mut seen = HashSet::new();
    terms
        .into_iter()
        .filter(|t| seen.insert(t.clone()))
        .map(|t| (t, clause.boost))
        .collect()
}

impl LeafClause {
    pub fn to_json(&self) -> Value {
        let key = match self.kind {
            LeafKind::Term => "value",
            LeafKind::Match => "query",
        };
        json!({ self.kind.name(): { &self.field: { key: self.query, "boost": self.boost } } })
    }
}

impl RangeClause {
    pub fn to_json(&self) -> Value {
        let mut bounds = Map::new();
        for (name, bound) in [("gt", self.gt), ("gte", self.gte), ("lt", self.lt), ("lte", self.lte)] {
            if let Some(b) = bound {
                bounds.insert(name.into(), json!(b));
            }
        }
        json!({"range": { &self.field: bounds }})
    }
}

impl QueryAst {
    /// Canonical JSON form; parses back to an equal AST.
    pub fn to_json(&self) -> Value {
        let query = match &self.root {
            QueryRoot::Leaf(leaf) => leaf.to_json(),
            QueryRoot::Bool(b) => json!({"bool": {
                "should": b.should.iter().map(LeafClause::to_json).collect::<Vec<_>>(),
                "filter": b.filter.iter().map(RangeClause::to_json).collect::<Vec<_>>(),
            }}),
        };
        json!({"query": query, "size": self.size})
    }
}
