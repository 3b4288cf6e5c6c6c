//! Movie search and recommendation demo on top of the engine: CSV
//! ingestion, query builders and the `/apps/movies` routes.

pub mod gateway;
pub mod ingest;
pub mod model;
pub mod query;

pub use model::{movie_mapping, MovieDoc, INDEX, TYPE};

/// Path of the bundled 20-movie CSV fixture.
pub fn fixture_path() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join("movies.csv")
}
