//! Text analyzers used at index time and for match-query text at search time.
//!
//! Four analyzers are available, selected by name in a field mapping:
//!
//!  - `standard` splits on runs of non-alphanumeric characters, lowercases and
//!    drops English stopwords
//!  - `whitespace` splits on whitespace and keeps case
//!  - `simple` splits on anything that is not a letter and lowercases
//!  - `n_gram` whitespace-splits and emits the character n-grams of each token
//!
//! Keyword and numeric fields never pass through an analyzer.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mapping::{DataType, FieldMapping};

pub const DEFAULT_MIN_GRAM: usize = 3;
pub const DEFAULT_MAX_GRAM: usize = 3;

pub const ENGLISH_STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "but", "by", "for", "if", "in", "into", "is", "it",
    "no", "not", "of", "on", "or", "such", "that", "the", "their", "then", "there", "these",
    "they", "this", "to", "was", "will", "with",
];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("unknown analyzer [{0}]")]
    UnknownAnalyzer(String),
    #[error("invalid n_gram sizes: min_gram {min} max_gram {max} (need 3 <= min_gram <= max_gram)")]
    InvalidGramSize { min: usize, max: usize },
}

/// A single term produced by an analyzer. Never empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Token {
    pub term: String,
}

impl Token {
    fn new(term: impl Into<String>) -> Self {
        Token { term: term.into() }
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.term)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AnalyzerKind {
    #[serde(rename = "standard")]
    Standard,
    #[serde(rename = "whitespace")]
    Whitespace,
    #[serde(rename = "simple")]
    Simple,
    #[serde(rename = "n_gram")]
    NGram,
}

impl AnalyzerKind {
    pub fn name(self) -> &'static str {
        match self {
            AnalyzerKind::Standard => "standard",
            AnalyzerKind::Whitespace => "whitespace",
            AnalyzerKind::Simple => "simple",
            AnalyzerKind::NGram => "n_gram",
        }
    }
}

impl FromStr for AnalyzerKind {
    type Err = AnalysisError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "standard" => Ok(AnalyzerKind::Standard),
            "whitespace" => Ok(AnalyzerKind::Whitespace),
            "simple" => Ok(AnalyzerKind::Simple),
            "n_gram" => Ok(AnalyzerKind::NGram),
            other => Err(AnalysisError::UnknownAnalyzer(other.to_string())),
        }
    }
}

impl fmt::Display for AnalyzerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzerConfig {
    kind: AnalyzerKind,
    min_gram: usize,
    max_gram: usize,
    /// `None` means the built-in English list.
    stopwords: Option<Arc<HashSet<String>>>,
}

impl AnalyzerConfig {
    pub fn new(kind: AnalyzerKind) -> Self {
        AnalyzerConfig {
            kind,
            min_gram: DEFAULT_MIN_GRAM,
            max_gram: DEFAULT_MAX_GRAM,
            stopwords: None,
        }
    }

    pub fn by_name(name: &str) -> Result<Self, AnalysisError> {
        name.parse().map(Self::new)
    }

    pub fn n_gram(min_gram: usize, max_gram: usize) -> Result<Self, AnalysisError> {
        if min_gram < DEFAULT_MIN_GRAM || min_gram > max_gram {
            return Err(AnalysisError::InvalidGramSize {
                min: min_gram,
                max: max_gram,
            });
        }
        Ok(AnalyzerConfig {
            min_gram,
            max_gram,
            ..Self::new(AnalyzerKind::NGram)
        })
    }

    /// Replaces the stopword list of a standard analyzer. Entries are lowercased.
    pub fn with_stopwords<I, S>(mut self, words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let set = words
            .into_iter()
            .map(|w| w.as_ref().to_lowercase())
            .collect::<HashSet<_>>();
        self.stopwords = Some(Arc::new(set));
        self
    }

    pub fn kind(&self) -> AnalyzerKind {
        self.kind
    }

    pub fn min_gram(&self) -> usize {
        self.min_gram
    }

    pub fn max_gram(&self) -> usize {
        self.max_gram
    }

    fn is_stopword(&self, term: &str) -> bool {
        match &self.stopwords {
            Some(custom) => custom.contains(term),
            None => ENGLISH_STOPWORDS.contains(&term),
        }
    }

    pub fn analyze(&self, text: &str) -> Vec<Token> {
        match self.kind {
            AnalyzerKind::Standard => text
                .to_lowercase()
                .split(|c: char| !c.is_alphanumeric())
                .filter(|t| !t.is_empty() && !self.is_stopword(t))
                .map(Token::new)
                .collect(),
            AnalyzerKind::Whitespace => text.split_whitespace().map(Token::new).collect(),
            // Lowercase first: some uppercase letters lowercase into a letter
            // plus a combining mark, and the mark must act as a separator.
            AnalyzerKind::Simple => text
                .to_lowercase()
                .split(|c: char| !c.is_alphabetic())
                .filter(|t| !t.is_empty())
                .map(Token::new)
                .collect(),
            AnalyzerKind::NGram => {
                let mut out = Vec::new();
                for word in text.split_whitespace() {
                    push_ngrams(word, self.min_gram, self.max_gram, &mut out);
                }
                out
            }
        }
    }
}

impl Default for AnalyzerConfig {
    fn default() -> Self {
        Self::new(AnalyzerKind::Standard)
    }
}

fn push_ngrams(word: &str, min_gram: usize, max_gram: usize, out: &mut Vec<Token>) {
    let chars: Vec<char> = word.chars().collect();
    if chars.len() < min_gram {
        out.push(Token::new(word));
        return;
    }
    for size in min_gram..=max_gram.min(chars.len()) {
        for window in chars.windows(size) {
            out.push(Token::new(window.iter().collect::<String>()));
        }
    }
}

/// Analyzes `text` with the given configuration.
pub fn analyze(config: &AnalyzerConfig, text: &str) -> Vec<Token> {
    config.analyze(text)
}

/// Returns the (index, search) analyzer pair of a field. The search analyzer
/// falls back to the index analyzer, which falls back to `standard`.
pub fn resolve_analyzers(field: &FieldMapping) -> (AnalyzerConfig, AnalyzerConfig) {
    let index = field.analyzer.unwrap_or(AnalyzerKind::Standard);
    let search = field.search_analyzer.unwrap_or(index);
    (AnalyzerConfig::new(index), AnalyzerConfig::new(search))
}

/// Turns one scalar field value into index terms: text goes through the
/// field's index analyzer, everything else becomes a single verbatim term.
pub(crate) fn index_terms(field: &FieldMapping, value: &serde_json::Value) -> Vec<String> {
    match field.datatype {
        DataType::Text => match value.as_str() {
            Some(text) => resolve_analyzers(field)
                .0
                .analyze(text)
                .into_iter()
                .map(|t| t.term)
                .collect(),
            None => Vec::new(),
        },
        _ => crate::mapping::exact_term(field.datatype, value)
            .into_iter()
            .collect(),
    }
}
