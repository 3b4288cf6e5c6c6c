//! HTTP front end for the engine, with Elasticsearch-style URLs.

pub mod api;
pub mod client;
pub mod http;
