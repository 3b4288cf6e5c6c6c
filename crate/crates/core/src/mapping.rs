//! Index settings and field mappings.
//!
//! Mappings arrive in the Elasticsearch shape (`mappings.<type>.properties`)
//! and are flattened into a single-level map keyed by dotted path, so a
//! nested field `comment` with a child `name` becomes `comment.name`. The
//! same flattening is applied to documents before indexing.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::analysis::{AnalysisError, AnalyzerKind};

pub const MAX_SHARDS: u64 = 1024;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MappingError {
    #[error("malformed index request: {0}")]
    Malformed(String),
    #[error("invalid name [{0}]: must be non-empty, not start with '_' or '-', and not contain '.', '/', '\\' or whitespace")]
    InvalidName(String),
    #[error("field name [{0}] must not contain '.'")]
    DottedFieldName(String),
    #[error("no handler for type [{datatype}] declared on field [{path}]")]
    UnknownDatatype { path: String, datatype: String },
    #[error("field [{0}] declares an analyzer but is not of type text")]
    AnalyzerOnNonText(String),
    #[error("nested field [{0}] must declare child properties")]
    NestedWithoutProperties(String),
    #[error("field [{0}] is mapped more than once with conflicting definitions")]
    DuplicatePath(String),
    #[error("unknown parameter [{param}] on field [{path}]")]
    UnknownParameter { path: String, param: String },
    #[error("field [{path}]: {source}")]
    Analyzer {
        path: String,
        #[source]
        source: AnalysisError,
    },
    #[error("number_of_shards must be an integer between 1 and {MAX_SHARDS}, got {0}")]
    InvalidShardCount(String),
    #[error("failed to parse field [{path}] of type [{expected}]: found {found}")]
    TypeMismatch {
        path: String,
        expected: DataType,
        found: String,
    },
    #[error("document must be a JSON object")]
    NotAnObject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataType {
    Integer,
    Float,
    Double,
    Text,
    Keyword,
    Nested,
}

impl DataType {
    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "integer" => DataType::Integer,
            "float" => DataType::Float,
            "double" => DataType::Double,
            "text" => DataType::Text,
            "keyword" => DataType::Keyword,
            "nested" => DataType::Nested,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            DataType::Integer => "integer",
            DataType::Float => "float",
            DataType::Double => "double",
            DataType::Text => "text",
            DataType::Keyword => "keyword",
            DataType::Nested => "nested",
        }
    }

    pub fn is_numeric(self) -> bool {
        matches!(self, DataType::Integer | DataType::Float | DataType::Double)
    }
}

impl fmt::Display for DataType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexSettings {
    pub number_of_shards: u32,
}

impl Default for IndexSettings {
    fn default() -> Self {
        IndexSettings {
            number_of_shards: 1,
        }
    }
}

/// One flattened leaf field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldMapping {
    pub path: String,
    #[serde(rename = "type")]
    pub datatype: DataType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analyzer: Option<AnalyzerKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search_analyzer: Option<AnalyzerKind>,
    #[serde(default = "default_true")]
    pub index: bool,
}

fn default_true() -> bool {
    true
}

impl FieldMapping {
    pub fn new(path: impl Into<String>, datatype: DataType) -> Self {
        FieldMapping {
            path: path.into(),
            datatype,
            analyzer: None,
            search_analyzer: None,
            index: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexMeta {
    pub name: String,
    pub settings: IndexSettings,
    pub fields: BTreeMap<String, FieldMapping>,
    pub types: BTreeSet<String>,
}

impl IndexMeta {
    pub fn num_shards(&self) -> usize {
        self.settings.number_of_shards as usize
    }

    pub fn field(&self, path: &str) -> Option<&FieldMapping> {
        self.fields.get(path)
    }

    pub fn has_type(&self, name: &str) -> bool {
        self.types.contains(name)
    }

    /// True when `path` is an object/nested container of some mapped leaf.
    pub fn is_container(&self, path: &str) -> bool {
        let prefix = format!("{path}.");
        self.fields
            .range(prefix.clone()..)
            .next()
            .is_some_and(|(k, _)| k.starts_with(&prefix))
    }

    /// Re-checks invariants of a meta read back from disk.
    pub fn validate(&self) -> Result<(), MappingError> {
        validate_name(&self.name)?;
        if self.settings.number_of_shards == 0
            || u64::from(self.settings.number_of_shards) > MAX_SHARDS
        {
            return Err(MappingError::InvalidShardCount(
                self.settings.number_of_shards.to_string(),
            ));
        }
        for t in &self.types {
            validate_name(t)?;
        }
        for (path, field) in &self.fields {
            if path != &field.path || field.datatype == DataType::Nested {
                return Err(MappingError::Malformed(format!("bad flattened field [{path}]")));
            }
            if field.datatype != DataType::Text
                && (field.analyzer.is_some() || field.search_analyzer.is_some())
            {
                return Err(MappingError::AnalyzerOnNonText(path.clone()));
            }
            if self.is_container(path) {
                return Err(MappingError::DuplicatePath(path.clone()));
            }
        }
        Ok(())
    }
}

/// Index and type names end up as directory names, so they are restricted.
pub fn validate_name(name: &str) -> Result<(), MappingError> {
    let bad = name.is_empty()
        || name.starts_with('_')
        || name.starts_with('-')
        || name
            .chars()
            .any(|c| matches!(c, '.' | '/' | '\\') || c.is_whitespace() || c.is_control());
    if bad {
        Err(MappingError::InvalidName(name.to_string()))
    } else {
        Ok(())
    }
}

/// Flattens a `properties` tree into dotted leaf paths, filling defaults
/// (analyzer `standard` for text, `index: true`).
pub fn flatten_mapping(properties: &Value) -> Result<BTreeMap<String, FieldMapping>, MappingError> {
    let mut out = BTreeMap::new();
    flatten_properties(properties, "", &mut out)?;
    Ok(out)
}

fn flatten_properties(
    properties: &Value,
    prefix: &str,
    out: &mut BTreeMap<String, FieldMapping>,
) -> Result<(), MappingError> {
    let props = properties.as_object().ok_or_else(|| {
        MappingError::Malformed(format!(
            "properties of [{}] must be an object",
            if prefix.is_empty() { "<root>" } else { prefix }
        ))
    })?;
    for (name, def) in props {
        if name.is_empty() {
            return Err(MappingError::Malformed("empty field name".into()));
        }
        if name.contains('.') {
            return Err(MappingError::DottedFieldName(name.clone()));
        }
        let path = if prefix.is_empty() {
            name.clone()
        } else {
            format!("{prefix}.{name}")
        };
        flatten_field(def, path, out)?;
    }
    Ok(())
}

fn flatten_field(
    def: &Value,
    path: String,
    out: &mut BTreeMap<String, FieldMapping>,
) -> Result<(), MappingError> {
    let def = def
        .as_object()
        .ok_or_else(|| MappingError::Malformed(format!("definition of [{path}] must be an object")))?;

    for key in def.keys() {
        if !matches!(
            key.as_str(),
            "type" | "analyzer" | "search_analyzer" | "index" | "properties"
        ) {
            return Err(MappingError::UnknownParameter {
                path,
                param: key.clone(),
            });
        }
    }

    let datatype = match def.get("type") {
        None if def.contains_key("properties") => DataType::Nested,
        None => {
            return Err(MappingError::Malformed(format!("field [{path}] has no type")));
        }
        Some(Value::String(name)) => {
            DataType::parse(name).ok_or_else(|| MappingError::UnknownDatatype {
                path: path.clone(),
                datatype: name.clone(),
            })?
        }
        Some(other) => {
            return Err(MappingError::UnknownDatatype {
                path,
                datatype: other.to_string(),
            })
        }
    };

    let analyzer = parse_analyzer(def.get("analyzer"), &path)?;
    let search_analyzer = parse_analyzer(def.get("search_analyzer"), &path)?;
    if datatype != DataType::Text && (analyzer.is_some() || search_analyzer.is_some()) {
        return Err(MappingError::AnalyzerOnNonText(path));
    }

    if datatype == DataType::Nested {
        return match def.get("properties") {
            Some(children) => flatten_properties(children, &path, out),
            None => Err(MappingError::NestedWithoutProperties(path)),
        };
    }
    if def.contains_key("properties") {
        return Err(MappingError::UnknownParameter {
            path,
            param: "properties".into(),
        });
    }

    let index = match def.get("index") {
        None => true,
        Some(Value::Bool(b)) => *b,
        Some(other) => {
            return Err(MappingError::Malformed(format!(
                "[index] on field [{path}] must be a boolean, got {other}"
            )))
        }
    };

    let field = FieldMapping {
        path: path.clone(),
        datatype,
        analyzer: if datatype == DataType::Text {
            Some(analyzer.unwrap_or(AnalyzerKind::Standard))
        } else {
            None
        },
        search_analyzer,
        index,
    };
    if out.insert(path.clone(), field).is_some() {
        return Err(MappingError::DuplicatePath(path));
    }
    Ok(())
}

fn parse_analyzer(value: Option<&Value>, path: &str) -> Result<Option<AnalyzerKind>, MappingError> {
    match value {
        None => Ok(None),
        Some(Value::String(name)) => name
            .parse()
            .map(Some)
            .map_err(|source| MappingError::Analyzer {
                path: path.to_string(),
                source,
            }),
        Some(other) => Err(MappingError::Malformed(format!(
            "analyzer of [{path}] must be a string, got {other}"
        ))),
    }
}

/// Rebuilds a `properties` tree from flattened fields.
pub fn unflatten_mapping(fields: &BTreeMap<String, FieldMapping>) -> Value {
    let mut root = Map::new();
    for field in fields.values() {
        let mut parts = field.path.split('.').peekable();
        let mut node = &mut root;
        while let Some(part) = parts.next() {
            if parts.peek().is_none() {
                let mut def = Map::new();
                def.insert("type".into(), Value::from(field.datatype.name()));
                if let Some(a) = field.analyzer {
                    def.insert("analyzer".into(), Value::from(a.name()));
                }
                if let Some(a) = field.search_analyzer {
                    def.insert("search_analyzer".into(), Value::from(a.name()));
                }
                if !field.index {
                    def.insert("index".into(), Value::Bool(false));
                }
                node.insert(part.to_string(), Value::Object(def));
            } else {
                let child = node
                    .entry(part.to_string())
                    .or_insert_with(|| serde_json::json!({"type": "nested", "properties": {}}));
                node = child
                    .get_mut("properties")
                    .and_then(Value::as_object_mut)
                    .expect("container node always has properties");
            }
        }
    }
    Value::Object(root)
}

/// Builds an [`IndexMeta`] from a create-index request body:
/// `{"settings": {"number_of_shards": n}, "mappings": {"<type>": {"properties": {...}}}}`.
pub fn validate_index_request(name: &str, body: &Value) -> Result<IndexMeta, MappingError> {
    validate_name(name)?;
    let body = body
        .as_object()
        .ok_or_else(|| MappingError::Malformed("request body must be a JSON object".into()))?;
    if let Some(key) = body.keys().find(|k| !matches!(k.as_str(), "settings" | "mappings")) {
        return Err(MappingError::Malformed(format!("unknown key [{key}]")));
    }

    let settings = match body.get("settings") {
        None => IndexSettings::default(),
        Some(s) => parse_settings(s)?,
    };

    let mappings = body
        .get("mappings")
        .ok_or_else(|| MappingError::Malformed("missing [mappings]".into()))?
        .as_object()
        .ok_or_else(|| MappingError::Malformed("[mappings] must be an object".into()))?;
    if mappings.is_empty() {
        return Err(MappingError::Malformed("[mappings] must declare at least one type".into()));
    }

    let mut fields: BTreeMap<String, FieldMapping> = BTreeMap::new();
    let mut types = BTreeSet::new();
    for (type_name, type_body) in mappings {
        validate_name(type_name)?;
        let properties = type_body
            .get("properties")
            .ok_or_else(|| MappingError::Malformed(format!("type [{type_name}] has no [properties]")))?;
        for (path, field) in flatten_mapping(properties)? {
            match fields.get(&path) {
                Some(existing) if existing != &field => {
                    return Err(MappingError::DuplicatePath(path));
                }
                _ => {
                    fields.insert(path, field);
                }
            }
        }
        types.insert(type_name.clone());
    }

    let meta = IndexMeta {
        name: name.to_string(),
        settings,
        fields,
        types,
    };
    // catches a leaf in one type that is a container in another
    meta.validate()?;
    Ok(meta)
}

fn parse_settings(settings: &Value) -> Result<IndexSettings, MappingError> {
    let obj = settings
        .as_object()
        .ok_or_else(|| MappingError::Malformed("[settings] must be an object".into()))?;
    let shards = obj
        .get("number_of_shards")
        .or_else(|| obj.get("index").and_then(|i| i.get("number_of_shards")));
    match shards {
        None => Ok(IndexSettings::default()),
        Some(v) => match v.as_u64() {
            Some(n) if (1..=MAX_SHARDS).contains(&n) => Ok(IndexSettings {
                number_of_shards: n as u32,
            }),
            _ => Err(MappingError::InvalidShardCount(v.to_string())),
        },
    }
}

fn describe(value: &Value) -> String {
    match value {
        Value::Null => "null".into(),
        Value::Bool(b) => format!("boolean {b}"),
        Value::Number(n) => format!("number {n}"),
        Value::String(s) => format!("string \"{s}\""),
        Value::Array(_) => "array".into(),
        Value::Object(_) => "object".into(),
    }
}

fn check_leaf(field: &FieldMapping, value: &Value) -> Result<(), MappingError> {
    let ok = match field.datatype {
        DataType::Integer => value.is_i64() || value.is_u64(),
        DataType::Float | DataType::Double => value.is_number(),
        DataType::Text | DataType::Keyword => value.is_string(),
        DataType::Nested => false,
    };
    if ok {
        Ok(())
    } else {
        Err(MappingError::TypeMismatch {
            path: field.path.clone(),
            expected: field.datatype,
            found: describe(value),
        })
    }
}

/// Pairs every mapped leaf value of `doc` with its dotted path. Arrays expand
/// element-wise, nulls are skipped, unmapped fields are ignored.
pub fn flatten_document(doc: &Value, meta: &IndexMeta) -> Result<Vec<(String, Value)>, MappingError> {
    let obj = doc.as_object().ok_or(MappingError::NotAnObject)?;
    let mut out = Vec::new();
    flatten_object(obj, "", meta, &mut out)?;
    Ok(out)
}

fn flatten_object(
    obj: &Map<String, Value>,
    prefix: &str,
    meta: &IndexMeta,
    out: &mut Vec<(String, Value)>,
) -> Result<(), MappingError> {
    for (key, value) in obj {
        let path = if prefix.is_empty() {
            key.clone()
        } else {
            format!("{prefix}.{key}")
        };
        if let Some(field) = meta.field(&path) {
            emit_leaf(field, value, out)?;
        } else if meta.is_container(&path) {
            emit_container(&path, value, meta, out)?;
        }
    }
    Ok(())
}

fn emit_leaf(field: &FieldMapping, value: &Value, out: &mut Vec<(String, Value)>) -> Result<(), MappingError> {
    match value {
        Value::Null => Ok(()),
        Value::Array(items) => items.iter().try_for_each(|v| emit_leaf(field, v, out)),
        scalar => {
            check_leaf(field, scalar)?;
            out.push((field.path.clone(), scalar.clone()));
            Ok(())
        }
    }
}

fn emit_container(
    path: &str,
    value: &Value,
    meta: &IndexMeta,
    out: &mut Vec<(String, Value)>,
) -> Result<(), MappingError> {
    match value {
        Value::Null => Ok(()),
        Value::Object(obj) => flatten_object(obj, path, meta, out),
        Value::Array(items) => items
            .iter()
            .try_for_each(|v| emit_container(path, v, meta, out)),
        other => Err(MappingError::TypeMismatch {
            path: path.to_string(),
            expected: DataType::Nested,
            found: describe(other),
        }),
    }
}

/// All scalar values reachable in `doc` along a dotted path, fanning out
/// through arrays.
pub fn values_at_path<'a>(doc: &'a Value, path: &str) -> Vec<&'a Value> {
    let mut current = vec![doc];
    for part in path.split('.') {
        let mut next = Vec::new();
        for v in current {
            collect_child(v, part, &mut next);
        }
        current = next;
    }
    let mut out = Vec::new();
    for v in current {
        push_scalars(v, &mut out);
    }
    out
}

fn collect_child<'a>(value: &'a Value, key: &str, out: &mut Vec<&'a Value>) {
    match value {
        Value::Object(obj) => {
            if let Some(child) = obj.get(key) {
                out.push(child);
            }
        }
        Value::Array(items) => items.iter().for_each(|v| collect_child(v, key, out)),
        _ => {}
    }
}

fn push_scalars<'a>(value: &'a Value, out: &mut Vec<&'a Value>) {
    match value {
        Value::Array(items) => items.iter().for_each(|v| push_scalars(v, out)),
        Value::Null | Value::Object(_) => {}
        scalar => out.push(scalar),
    }
}

fn canonical_float(f: f64) -> String {
    format!("{f}")
}

/// The single verbatim index term of a keyword or numeric value.
pub(crate) fn exact_term(datatype: DataType, value: &Value) -> Option<String> {
    match datatype {
        DataType::Keyword => value.as_str().map(str::to_string),
        DataType::Integer => value
            .as_i64()
            .map(|n| n.to_string())
            .or_else(|| value.as_u64().map(|n| n.to_string())),
        DataType::Float | DataType::Double => value.as_f64().map(canonical_float),
        DataType::Text | DataType::Nested => None,
    }
}

/// Normalizes a query-side value for exact lookup against a field, so that
/// `6.0`, `6` and `"6"` all address the same term of a numeric field.
pub(crate) fn query_term(datatype: DataType, value: &Value) -> Option<String> {
    match datatype {
        DataType::Integer => {
            if let Some(t) = exact_term(DataType::Integer, value) {
                return Some(t);
            }
            let f = match value {
                Value::Number(n) => n.as_f64()?,
                Value::String(s) => {
                    let s = s.trim();
                    if let Ok(i) = s.parse::<i64>() {
                        return Some(i.to_string());
                    }
                    s.parse::<f64>().ok()?
                }
                _ => return None,
            };
            if f.fract() == 0.0 && f.abs() < 9.0e15 {
                Some((f as i64).to_string())
            } else {
                None
            }
        }
        DataType::Float | DataType::Double => match value {
            Value::Number(n) => n.as_f64().map(canonical_float),
            Value::String(s) => s.trim().parse::<f64>().ok().filter(|f| f.is_finite()).map(canonical_float),
            _ => None,
        },
        DataType::Keyword | DataType::Text => match value {
            Value::String(s) => Some(s.clone()),
            Value::Number(n) => Some(n.to_string()),
            Value::Bool(b) => Some(b.to_string()),
            _ => None,
        },
        DataType::Nested => None,
    }
}
