//! Request routing, independent of the HTTP server.
//!
//! | method        | path                          | action                        |
//! |---------------|-------------------------------|-------------------------------|
//! | GET           | `/`                           | engine info                   |
//! | GET, POST     | `/_search`                    | search every index            |
//! | PUT           | `/{index}`                    | create index                  |
//! | DELETE        | `/{index}`                    | drop index                    |
//! | GET, POST     | `/{index}/_search`            | search all types of an index  |
//! | POST          | `/{index}/{type}`             | add with a generated id       |
//! | GET, POST     | `/{index}/{type}/_search`     | search one type               |
//! | PUT, GET, DEL | `/{index}/{type}/{id}`        | write, read, delete by id     |
//! | GET           | `/apps/movies/...`            | movie demo                    |

use percent_encoding::percent_decode_str;
use serde_json::{json, Value};
use sqe_core::engine::{Engine, EngineError};
use sqe_core::querydsl::QueryError;
use sqe_core::retriever::RetrieveError;
use sqe_core::store::{StoreError, WriteResult};
use sqe_movies::gateway::{self, GatewayError};

#[derive(Debug, Clone, PartialEq)]
pub struct ApiResponse {
    pub status: u16,
    /// `None` for responses without a body.
    pub body: Option<Value>,
}

impl ApiResponse {
    fn ok(body: Value) -> Self {
        Self::with(200, body)
    }

    fn with(status: u16, body: Value) -> Self {
        ApiResponse {
            status,
            body: Some(body),
        }
    }

    pub fn error(status: u16, kind: &str, reason: impl Into<String>) -> Self {
        Self::with(
            status,
            json!({"error": {"type": kind, "reason": reason.into()}, "status": status}),
        )
    }
}

fn engine_error(e: EngineError) -> ApiResponse {
    let reason = e.to_string();
    let (status, kind) = match &e {
        EngineError::IndexNotFound(_) => (404, "index_not_found_exception"),
        EngineError::IndexExists(_) => (400, "resource_already_exists_exception"),
        EngineError::Mapping(_) => (400, "mapper_parsing_exception"),
        EngineError::Query(QueryError::UnknownField(_) | QueryError::FieldNotIndexed(_)) => {
            (400, "query_shard_exception")
        }
        EngineError::Query(_) => (400, "parsing_exception"),
        EngineError::Store(StoreError::UnknownType(_)) | EngineError::Retrieve(RetrieveError::UnknownType(_)) => {
            (404, "type_missing_exception")
        }
        EngineError::Store(StoreError::NotFound { .. } | StoreError::AlreadyDeleted { .. }) => {
            (404, "document_missing_exception")
        }
        EngineError::Store(StoreError::Mapping(_)) => (400, "mapper_parsing_exception"),
        EngineError::Store(StoreError::EmptyId | StoreError::AlreadyIndexed { .. }) => {
            (400, "illegal_argument_exception")
        }
        EngineError::Store(StoreError::Corrupt(_))
        | EngineError::Durability(_)
        | EngineError::Config(_)
        | EngineError::DataDir { .. } => (500, "internal_error"),
    };
    if status == 500 {
        log::error!("{reason}");
    }
    ApiResponse::error(status, kind, reason)
}

fn gateway_error(e: GatewayError) -> ApiResponse {
    match e {
        GatewayError::BadRequest(r) => ApiResponse::error(400, "illegal_argument_exception", r),
        GatewayError::NotFound(r) => ApiResponse::error(404, "resource_not_found_exception", r),
        GatewayError::MethodNotAllowed(m) => method_not_allowed(&m),
        GatewayError::Engine(e) => engine_error(e),
    }
}

fn method_not_allowed(method: &str) -> ApiResponse {
    ApiResponse::error(405, "method_not_allowed", format!("method {method} is not allowed on this route"))
}

fn parse_body(body: &[u8]) -> Result<Value, ApiResponse> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Err(ApiResponse::error(400, "parse_exception", "request body is required"));
    }
    serde_json::from_slice(body).map_err(|e| ApiResponse::error(400, "json_parse_exception", e.to_string()))
}

fn parse_object(body: &[u8]) -> Result<Value, ApiResponse> {
    let v = parse_body(body)?;
    if !v.is_object() {
        return Err(ApiResponse::error(400, "parse_exception", "request body must be a JSON object"));
    }
    Ok(v)
}

/// Splits and percent-decodes a path. Empty segments are ignored.
fn segments(path: &str) -> Result<Vec<String>, ApiResponse> {
    path.split('/')
        .filter(|s| !s.is_empty())
        .map(|s| {
            percent_decode_str(s)
                .decode_utf8()
                .map(|c| c.into_owned())
                .map_err(|_| ApiResponse::error(400, "illegal_argument_exception", "path is not valid UTF-8"))
        })
        .collect()
}

fn unknown_route(method: &str, path: &str) -> ApiResponse {
    ApiResponse::error(404, "no_handler_found", format!("no handler for {method} {path}"))
}

/// Handles one request. Never panics on any input.
pub fn route(engine: &Engine, method: &str, path: &str, query: Option<&str>, body: &[u8]) -> ApiResponse {
    if method == "OPTIONS" {
        return ApiResponse { status: 204, body: None };
    }
    let segs = match segments(path) {
        Ok(s) => s,
        Err(resp) => return resp,
    };
    let segs: Vec<&str> = segs.iter().map(String::as_str).collect();

    if let Some(result) = gateway::handle(engine, method, &segs, query) {
        return result.map(ApiResponse::ok).unwrap_or_else(gateway_error);
    }
    let reserved = |s: &str| s.starts_with('_');
    let result = match segs.as_slice() {
        [] => match method {
            "GET" | "HEAD" => Ok(ApiResponse::ok(engine.info())),
            _ => Err(method_not_allowed(method)),
        },
        ["_search"] => search(method, body, |b| engine.search_all(b)),
        [name, ..] if reserved(name) => Err(unknown_route(method, path)),
        [index] => match method {
            "PUT" => parse_object(body).and_then(|b| {
                engine
                    .create_index(index, &b)
                    .map(|_| ApiResponse::ok(json!({"acknowledged": true, "index": index})))
                    .map_err(engine_error)
            }),
            "DELETE" => engine
                .drop_index(index)
                .map(|_| ApiResponse::ok(json!({"acknowledged": true})))
                .map_err(engine_error),
            _ => Err(method_not_allowed(method)),
        },
        [index, "_search"] => search(method, body, |b| engine.search(index, None, b)),
        [_, t, ..] if reserved(t) => Err(unknown_route(method, path)),
        [index, type_name] => match method {
            "POST" => write(engine, index, type_name, None, body),
            _ => Err(method_not_allowed(method)),
        },
        [index, type_name, "_search"] => search(method, body, |b| engine.search(index, Some(type_name), b)),
        [index, type_name, id] => match method {
            "PUT" | "POST" => write(engine, index, type_name, Some(id), body),
            "GET" | "HEAD" => get(engine, index, type_name, id),
            "DELETE" => delete(engine, index, type_name, id),
            _ => Err(method_not_allowed(method)),
        },
        _ => Err(unknown_route(method, path)),
    };
    result.unwrap_or_else(|e| e)
}

fn search(
    method: &str,
    body: &[u8],
    run: impl FnOnce(&Value) -> Result<sqe_core::retriever::SearchResponse, EngineError>,
) -> Result<ApiResponse, ApiResponse> {
    if method != "GET" && method != "POST" {
        return Err(method_not_allowed(method));
    }
    let body = parse_object(body)?;
    run(&body).map(|r| ApiResponse::ok(r.to_json())).map_err(engine_error)
}

fn write(
    engine: &Engine,
    index: &str,
    type_name: &str,
    id: Option<&str>,
    body: &[u8],
) -> Result<ApiResponse, ApiResponse> {
    let doc = parse_object(body)?;
    let out = engine.put_document(index, type_name, id, doc).map_err(engine_error)?;
    let status = match out.result {
        WriteResult::Created => 201,
        WriteResult::Updated => 200,
    };
    Ok(ApiResponse::with(
        status,
        json!({"_index": index, "_type": type_name, "_id": out.id, "result": out.result.as_str()}),
    ))
}

fn get(engine: &Engine, index: &str, type_name: &str, id: &str) -> Result<ApiResponse, ApiResponse> {
    let doc = engine.get_document(index, type_name, id).map_err(engine_error)?;
    let head = json!({"_index": index, "_type": type_name, "_id": id});
    Ok(match doc {
        Some(source) => {
            let mut body = head;
            body["found"] = json!(true);
            body["_source"] = source;
            ApiResponse::ok(body)
        }
        None => {
            let mut body = head;
            body["found"] = json!(false);
            ApiResponse::with(404, body)
        }
    })
}

fn delete(engine: &Engine, index: &str, type_name: &str, id: &str) -> Result<ApiResponse, ApiResponse> {
    let mut body = json!({"_index": index, "_type": type_name, "_id": id});
    match engine.delete_document(index, type_name, id) {
        Ok(()) => {
            body["result"] = json!("deleted");
            body["found"] = json!(true);
            Ok(ApiResponse::ok(body))
        }
        Err(EngineError::Store(StoreError::NotFound { .. } | StoreError::AlreadyDeleted { .. })) => {
            body["result"] = json!("not_found");
            body["found"] = json!(false);
            Ok(ApiResponse::with(404, body))
        }
        Err(e) => Err(engine_error(e)),
    }
}
