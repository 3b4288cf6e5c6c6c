//! Translate demo parameters into the engine's query DSL.

use std::fmt;
use std::str::FromStr;

use serde_json::{json, Value};

use crate::model::MovieDoc;

/// Weight given to genre and plot keyword clauses in recommendations.
pub const RECOMMEND_BOOST: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchField {
    MovieTitle,
    DirectorName,
    ActorNames,
}

impl SearchField {
    pub fn as_str(self) -> &'static str {
        match self {
            SearchField::MovieTitle => "movie_title",
            SearchField::DirectorName => "director_name",
            SearchField::ActorNames => "actor_names",
        }
    }
}

impl FromStr for SearchField {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "movie_title" => Ok(SearchField::MovieTitle),
            "director_name" => Ok(SearchField::DirectorName),
            "actor_names" => Ok(SearchField::ActorNames),
            other => Err(format!(
                "unknown search field [{other}], expected movie_title, director_name or actor_names"
            )),
        }
    }
}

impl fmt::Display for SearchField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MovieSearchParams {
    pub field: SearchField,
    pub query: String,
    pub genre: Option<String>,
    pub min_score: Option<f64>,
}

impl MovieSearchParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.query.trim().is_empty() {
            return Err("query must not be empty".into());
        }
        if let Some(s) = self.min_score {
            if !(0.0..=10.0).contains(&s) {
                return Err(format!("min_score {s} outside [0, 10]"));
            }
        }
        if self.genre.as_deref().is_some_and(|g| g.trim().is_empty()) {
            return Err("genre must not be empty".into());
        }
        Ok(())
    }
}

fn boosted_match(field: &str, query: &str, boost: f64) -> Value {
    json!({"match": {field: {"query": query, "boost": boost}}})
}

pub fn build_search_query(params: &MovieSearchParams) -> Value {
    let mut should = vec![json!({"match": {params.field.as_str(): params.query}})];
    if let Some(genre) = &params.genre {
        should.push(json!({"match": {"genres": genre}}));
    }
    let mut bool_query = json!({"should": should});
    if let Some(min) = params.min_score {
        bool_query["filter"] = json!([{"range": {"imdb_score": {"gte": min}}}]);
    }
    json!({"query": {"bool": bool_query}})
}

/// Query for movies similar to `movie`. Returns `None` when the movie has
/// nothing to match on.
pub fn build_recommendation_query(movie: &MovieDoc) -> Option<Value> {
    let mut should = Vec::new();
    for actor in movie.actor_names.iter().filter(|a| !a.trim().is_empty()) {
        should.push(json!({"match": {"actor_names": actor}}));
    }
    if !movie.director_name.trim().is_empty() {
        should.push(json!({"match": {"director_name": movie.director_name}}));
    }
    for genre in movie.genres.iter().filter(|g| !g.trim().is_empty()) {
        should.push(boosted_match("genres", genre, RECOMMEND_BOOST));
    }
    for kw in movie.plot_keywords.iter().filter(|k| !k.trim().is_empty()) {
        should.push(boosted_match("plot_keywords", kw, RECOMMEND_BOOST));
    }
    if should.is_empty() {
        return None;
    }
    Some(json!({"query": {"bool": {"should": should}}}))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{movie_mapping, INDEX};
    use proptest::prelude::*;
    use sqe_core::mapping::validate_index_request;
    use sqe_core::querydsl::{parse_query, QueryRoot};

    fn params(field: SearchField, q: &str, genre: Option<&str>, min: Option<f64>) -> MovieSearchParams {
        MovieSearchParams {
            field,
            query: q.into(),
            genre: genre.map(str::to_string),
            min_score: min,
        }
    }

    #[test]
    fn search_query_shapes() {
        let q = build_search_query(&params(SearchField::DirectorName, "Shane Black", Some("Action"), Some(6.0)));
        assert_eq!(
            q,
            json!({"query": {"bool": {
                "should": [{"match": {"director_name": "Shane Black"}}, {"match": {"genres": "Action"}}],
                "filter": [{"range": {"imdb_score": {"gte": 6.0}}}]
            }}})
        );
        let q = build_search_query(&params(SearchField::MovieTitle, "iron", None, None));
        assert_eq!(q, json!({"query": {"bool": {"should": [{"match": {"movie_title": "iron"}}]}}}));
        let q = build_search_query(&params(SearchField::MovieTitle, "iron", None, Some(5.0)));
        assert_eq!(q["query"]["bool"]["should"].as_array().unwrap().len(), 1);
        assert_eq!(q["query"]["bool"]["filter"].as_array().unwrap().len(), 1);
    }

    #[test]
    fn param_validation() {
        assert!(params(SearchField::ActorNames, "x", None, Some(10.0)).validate().is_ok());
        assert!(params(SearchField::ActorNames, " ", None, None).validate().is_err());
        assert!(params(SearchField::ActorNames, "x", None, Some(-0.1)).validate().is_err());
        assert!(params(SearchField::ActorNames, "x", Some(""), None).validate().is_err());
        assert_eq!("actor_names".parse::<SearchField>(), Ok(SearchField::ActorNames));
        assert!("genres".parse::<SearchField>().is_err());
    }

    #[test]
    fn recommendation_boosts() {
        let meta = validate_index_request(INDEX, &movie_mapping(1)).unwrap();
        let movie = MovieDoc {
            movie_title: "Iron Man 3".into(),
            director_name: "Shane Black".into(),
            actor_names: vec!["Robert Downey Jr.".into(), "Don Cheadle".into()],
            genres: vec!["Action".into(), "Sci-Fi".into()],
            plot_keywords: vec!["human bomb".into()],
            imdb_score: 7.2,
        };
        let q = build_recommendation_query(&movie).unwrap();
        let QueryRoot::Bool(b) = parse_query(&q, &meta).unwrap().root else { panic!() };
        let summary: Vec<(&str, f64)> = b.should.iter().map(|c| (c.field.as_str(), c.boost)).collect();
        assert_eq!(
            summary,
            [
                ("actor_names", 1.0),
                ("actor_names", 1.0),
                ("director_name", 1.0),
                ("genres", 2.0),
                ("genres", 2.0),
                ("plot_keywords", 2.0)
            ]
        );

        let bare = MovieDoc { plot_keywords: vec![], ..movie.clone() };
        let q = build_recommendation_query(&bare).unwrap();
        assert!(!q.to_string().contains("plot_keywords"));

        let empty = MovieDoc {
            director_name: String::new(),
            actor_names: vec![],
            genres: vec![],
            plot_keywords: vec![],
            ..movie
        };
        assert!(build_recommendation_query(&empty).is_none());
    }

    fn arb_movie() -> impl Strategy<Value = MovieDoc> {
        let words = prop::collection::vec("[A-Za-z.' -]{0,12}", 0..4);
        (
            "[A-Za-z ]{1,10}",
            "[A-Za-z .]{0,12}",
            words.clone(),
            words.clone(),
            words,
            0.0f64..=10.0,
        )
            .prop_map(|(t, d, a, g, p, s)| MovieDoc {
                movie_title: t,
                director_name: d,
                actor_names: a,
                genres: g,
                plot_keywords: p,
                imdb_score: s,
            })
    }

    proptest! {
        #[test]
        fn builders_always_parse(
            movie in arb_movie(),
            q in "[A-Za-z0-9 ]{1,20}",
            genre in prop::option::of("[A-Za-z-]{1,8}"),
            min in prop::option::of(0.0f64..=10.0),
            field in prop::sample::select(vec![SearchField::MovieTitle, SearchField::DirectorName, SearchField::ActorNames]),
        ) {
            let meta = validate_index_request(INDEX, &movie_mapping(1)).unwrap();
            let p = MovieSearchParams { field, query: q, genre, min_score: min };
            prop_assume!(p.validate().is_ok());
            prop_assert!(parse_query(&build_search_query(&p), &meta).is_ok());
            if let Some(rq) = build_recommendation_query(&movie) {
                prop_assert!(parse_query(&rq, &meta).is_ok());
            }
        }
    }
}
