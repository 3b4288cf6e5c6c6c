use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub const INDEX: &str = "movies";
pub const TYPE: &str = "movie";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovieDoc {
    pub movie_title: String,
    pub director_name: String,
    #[serde(default)]
    pub actor_names: Vec<String>,
    #[serde(default)]
    pub genres: Vec<String>,
    #[serde(default)]
    pub plot_keywords: Vec<String>,
    pub imdb_score: f64,
}

impl MovieDoc {
    pub fn validate(&self) -> Result<(), String> {
        if self.movie_title.trim().is_empty() {
            return Err("movie_title is empty".into());
        }
        if !(0.0..=10.0).contains(&self.imdb_score) {
            return Err(format!("imdb_score {} outside [0, 10]", self.imdb_score));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("movie serializes")
    }

    pub fn from_json(value: &Value) -> Result<Self, String> {
        serde_json::from_value(value.clone()).map_err(|e| e.to_string())
    }
}

/// Index creation body for the movie index. Actor names keep their case and
/// punctuation so that `term` queries on surnames work.
pub fn movie_mapping(shards: u32) -> Value {
    json!({
        "settings": {"number_of_shards": shards},
        "mappings": {
            TYPE: {
                "properties": {
                    "movie_title": {"type": "text"},
                    "director_name": {"type": "text"},
                    "actor_names": {"type": "text", "analyzer": "whitespace"},
                    "genres": {"type": "text"},
                    "plot_keywords": {"type": "text"},
                    "imdb_score": {"type": "float"}
                }
            }
        }
    })
}
