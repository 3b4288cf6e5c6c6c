//! axum adapter around [`crate::api::route`].

use std::future::Future;
use std::io;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::State;
use axum::http::{header, HeaderValue, Method, Response, StatusCode, Uri};
use axum::Router;
use sqe_core::engine::Engine;
use tokio::net::TcpListener;

use crate::api::{route, ApiResponse};

pub fn app(engine: Arc<Engine>) -> Router {
    Router::new().fallback(handle).with_state(engine)
}

async fn handle(State(engine): State<Arc<Engine>>, method: Method, uri: Uri, body: Bytes) -> Response<Body> {
    let path = uri.path().to_string();
    let query = uri.query().map(str::to_string);
    let m = method.as_str().to_string();
    // engine calls take locks and may touch the disk
    let result = tokio::task::spawn_blocking(move || route(&engine, &m, &path, query.as_deref(), &body)).await;
    let api = match result {
        Ok(r) => r,
        Err(e) => {
            log::error!("request handler failed: {e}");
            ApiResponse::error(500, "internal_error", "request handler failed")
        }
    };
    log::debug!("{method} {uri} -> {}", api.status);
    into_response(api, method == Method::HEAD)
}

fn into_response(api: ApiResponse, head: bool) -> Response<Body> {
    let mut builder = Response::builder()
        .status(StatusCode::from_u16(api.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR))
        .header(header::ACCESS_CONTROL_ALLOW_ORIGIN, HeaderValue::from_static("*"))
        .header(
            header::ACCESS_CONTROL_ALLOW_METHODS,
            HeaderValue::from_static("GET, POST, PUT, DELETE, HEAD, OPTIONS"),
        )
        .header(header::ACCESS_CONTROL_ALLOW_HEADERS, HeaderValue::from_static("Content-Type"));
    let body = match api.body {
        Some(v) => {
            builder = builder.header(header::CONTENT_TYPE, HeaderValue::from_static("application/json"));
            let bytes = serde_json::to_vec(&v).expect("JSON values serialize");
            if head {
                Body::empty()
            } else {
                Body::from(bytes)
            }
        }
        None => Body::empty(),
    };
    builder.body(body).expect("static headers are valid")
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    engine: Arc<Engine>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> io::Result<()> {
    axum::serve(listener, app(engine)).with_graceful_shutdown(shutdown).await
}
