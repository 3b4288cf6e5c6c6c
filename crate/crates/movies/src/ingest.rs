//! Loads movie rows from a Kaggle-style CSV export.
//!
//! Multi-valued cells (`genres`, `plot_keywords`) use `|` separators and the
//! three `actor_N_name` columns are merged into `actor_names`. Rows that fail
//! to parse are skipped and counted, never fatal.

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use sqe_core::engine::{Engine, EngineError};
use thiserror::Error;

use crate::model::{movie_mapping, MovieDoc, INDEX, TYPE};

pub const REQUIRED_COLUMNS: &[&str] = &[
    "movie_title",
    "director_name",
    "actor_1_name",
    "actor_2_name",
    "actor_3_name",
    "genres",
    "plot_keywords",
    "imdb_score",
];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing required columns: {}", .0.join(", "))]
    MissingColumns(Vec<String>),
    #[error("indexing failed: {0}")]
    Sink(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedRow {
    /// 1-based line number in the file, counting the header.
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Default)]
pub struct ParsedCsv {
    pub movies: Vec<MovieDoc>,
    pub skipped: Vec<SkippedRow>,
}

fn split_multi(cell: &str) -> Vec<String> {
    cell.split('|')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

pub fn parse_movies(reader: impl Read) -> Result<ParsedCsv, IngestError> {
    let mut csv = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = csv.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let missing: Vec<String> = REQUIRED_COLUMNS
        .iter()
        .filter(|c| col(c).is_none())
        .map(|c| c.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(IngestError::MissingColumns(missing));
    }
    let idx: Vec<usize> = REQUIRED_COLUMNS.iter().map(|c| col(c).unwrap()).collect();

    let mut out = ParsedCsv::default();
    for (n, record) in csv.records().enumerate() {
        let line = n as u64 + 2;
        let mut skip = |reason: String| {
            log::warn!("skipping CSV line {line}: {reason}");
            out.skipped.push(SkippedRow { line, reason });
        };
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                skip(e.to_string());
                continue;
            }
        };
        if record.len() < headers.len() {
            skip(format!("expected {} fields, found {}", headers.len(), record.len()));
            continue;
        }
        let cell = |i: usize| record.get(idx[i]).unwrap_or("").trim();
        let imdb_score = match cell(7).parse::<f64>() {
            Ok(s) if s.is_finite() => s,
            _ => {
                skip(format!("invalid imdb_score [{}]", cell(7)));
                continue;
            }
        };
        let movie = MovieDoc {
            movie_title: cell(0).to_string(),
            director_name: cell(1).to_string(),
            actor_names: (2..=4).map(cell).filter(|s| !s.is_empty()).map(str::to_string).collect(),
            genres: split_multi(cell(5)),
            plot_keywords: split_multi(cell(6)),
            imdb_score,
        };
        if let Err(reason) = movie.validate() {
            skip(reason);
            continue;
        }
        out.movies.push(movie);
    }
    Ok(out)
}

/// Destination for parsed movies.
pub trait DocSink {
    /// Called once before the first document, to create the index if needed.
    fn prepare(&mut self) -> Result<(), IngestError>;
    fn index(&mut self, movie: &MovieDoc) -> Result<String, IngestError>;
}

/// Writes straight into an in-process engine.
pub struct EngineSink<'a> {
    engine: &'a Engine,
    shards: u32,
}

impl<'a> EngineSink<'a> {
    pub fn new(engine: &'a Engine, shards: u32) -> Self {
        EngineSink { engine, shards }
    }
}

impl DocSink for EngineSink<'_> {
    fn prepare(&mut self) -> Result<(), IngestError> {
        match self.engine.create_index(INDEX, &movie_mapping(self.shards)) {
            Ok(_) | Err(EngineError::IndexExists(_)) => Ok(()),
            Err(e) => Err(IngestError::Sink(e.to_string())),
        }
    }

    fn index(&mut self, movie: &MovieDoc) -> Result<String, IngestError> {
        self.engine
            .put_document(INDEX, TYPE, None, movie.to_json())
            .map(|out| out.id)
            .map_err(|e| IngestError::Sink(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestSummary {
    pub indexed: usize,
    pub skipped: usize,
}

pub fn ingest_reader(reader: impl Read, sink: &mut dyn DocSink) -> Result<IngestSummary, IngestError> {
    let parsed = parse_movies(reader)?;
    sink.prepare()?;
    for movie in &parsed.movies {
        sink.index(movie)?;
    }
    if !parsed.skipped.is_empty() {
        log::warn!("skipped {} malformed rows", parsed.skipped.len());
    }
    Ok(IngestSummary {
        indexed: parsed.movies.len(),
        skipped: parsed.skipped.len(),
    })
}

pub fn ingest_csv(path: &Path, sink: &mut dyn DocSink) -> Result<IngestSummary, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ingest_reader(file, sink)
}
