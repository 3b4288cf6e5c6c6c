//! A single-node structured query engine.
//!
//! Documents are flattened according to an index mapping, analyzed, and
//! stored in per-field inverted indices partitioned into shards by document
//! id. Queries use an Elasticsearch-style JSON DSL (`term`, `match`, `bool`
//! with `should`/`filter`, `range`, `boost`) and are ranked by the inner
//! product of TF-IDF query and document vectors.

pub mod analysis;
pub mod durability;
pub mod engine;
pub mod mapping;
pub mod querydsl;
pub mod retriever;
pub mod store;
