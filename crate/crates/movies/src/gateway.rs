//! Handlers for the demo routes:
//!
//! - `GET /apps/movies/search?field=&q=&genre=&min_score=&size=`
//! - `GET /apps/movies/{id}/recommend?size=`
//!
//! Both answer in the engine's search response shape.

use serde_json::{json, Value};
use sqe_core::engine::{Engine, EngineError};
use thiserror::Error;

use crate::model::{MovieDoc, INDEX, TYPE};
use crate::query::{build_recommendation_query, build_search_query, MovieSearchParams, SearchField};

pub const PREFIX: [&str; 2] = ["apps", "movies"];

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    NotFound(String),
    #[error("method {0} not allowed")]
    MethodNotAllowed(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

fn params(query: Option<&str>) -> Vec<(String, String)> {
    form_urlencoded::parse(query.unwrap_or("").as_bytes())
        .map(|(k, v)| (k.into_owned(), v.into_owned()))
        .collect()
}

fn param<'a>(params: &'a [(String, String)], key: &str) -> Option<&'a str> {
    params.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

fn parse_size(params: &[(String, String)], default: usize) -> Result<usize, GatewayError> {
    match param(params, "size") {
        None => Ok(default),
        Some(s) => match s.parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(GatewayError::BadRequest(format!("invalid size [{s}]"))),
        },
    }
}

/// Dispatches a request whose path segments start with [`PREFIX`]. Returns
/// `None` for paths outside the demo.
pub fn handle(
    engine: &Engine,
    method: &str,
    segments: &[&str],
    query: Option<&str>,
) -> Option<Result<Value, GatewayError>> {
    let rest = segments.strip_prefix(&PREFIX[..])?;
    let route = match rest {
        ["search"] => Route::Search,
        [id, "recommend"] => Route::Recommend(id),
        _ => return None,
    };
    if method != "GET" {
        return Some(Err(GatewayError::MethodNotAllowed(method.to_string())));
    }
    let params = params(query);
    Some(match route {
        Route::Search => search(engine, &params),
        Route::Recommend(id) => recommend(engine, id, &params),
    })
}

enum Route<'a> {
    Search,
    Recommend(&'a str),
}

pub fn parse_search_params(params: &[(String, String)]) -> Result<MovieSearchParams, GatewayError> {
    let field = param(params, "field")
        .unwrap_or("movie_title")
        .parse::<SearchField>()
        .map_err(GatewayError::BadRequest)?;
    let query = param(params, "q")
        .ok_or_else(|| GatewayError::BadRequest("missing parameter [q]".into()))?
        .to_string();
    let genre = param(params, "genre").filter(|g| !g.is_empty()).map(str::to_string);
    let min_score = match param(params, "min_score").filter(|s| !s.is_empty()) {
        None => None,
        Some(s) => Some(
            s.parse::<f64>()
                .map_err(|_| GatewayError::BadRequest(format!("invalid min_score [{s}]")))?,
        ),
    };
    let p = MovieSearchParams {
        field,
        query,
        genre,
        min_score,
    };
    p.validate().map_err(GatewayError::BadRequest)?;
    Ok(p)
}

fn search(engine: &Engine, params: &[(String, String)]) -> Result<Value, GatewayError> {
    let p = parse_search_params(params)?;
    let size = parse_size(params, engine.config().default_size)?;
    let mut body = build_search_query(&p);
    body["size"] = json!(size);
    Ok(engine.search(INDEX, Some(TYPE), &body)?.to_json())
}

fn recommend(engine: &Engine, id: &str, params: &[(String, String)]) -> Result<Value, GatewayError> {
    let size = parse_size(params, engine.config().default_size)?;
    let source = engine
        .get_document(INDEX, TYPE, id)?
        .ok_or_else(|| GatewayError::NotFound(format!("movie [{id}] not found")))?;
    let movie = MovieDoc::from_json(&source)
        .map_err(|e| GatewayError::BadRequest(format!("movie [{id}] is not a movie document: {e}")))?;
    let Some(mut body) = build_recommendation_query(&movie) else {
        return Ok(json!({"took": 0, "hits": {"total": 0, "max_score": null, "hits": []}}));
    };

    // one extra hit leaves room to drop the movie itself
    body["size"] = json!(size + 1);
    let mut response = engine.search(INDEX, Some(TYPE), &body)?;
    let before = response.hits.len();
    response.hits.retain(|h| h.id != id);
    let self_matched = if response.hits.len() < before {
        true
    } else if response.total as usize > before {
        // the movie may rank below the window; check the full list
        body["size"] = json!(response.total);
        let full = engine.search(INDEX, Some(TYPE), &body)?;
        full.hits.iter().any(|h| h.id == id)
    } else {
        false
    };
    if self_matched {
        response.total -= 1;
    }
    response.hits.truncate(size);
    Ok(response.to_json())
}
