//! Pushes parsed movies to a running engine over HTTP.

use serde_json::Value;
use sqe_movies::ingest::{DocSink, IngestError};
use sqe_movies::{movie_mapping, MovieDoc, INDEX, TYPE};
use ureq::Agent;

pub struct HttpSink {
    agent: Agent,
    base: String,
    shards: u32,
}

impl HttpSink {
    pub fn new(base_url: &str, shards: u32) -> Self {
        let agent: Agent = Agent::config_builder().http_status_as_error(false).build().into();
        HttpSink {
            agent,
            base: base_url.trim_end_matches('/').to_string(),
            shards,
        }
    }

    fn send(&self, method: &str, path: &str, body: &Value) -> Result<(u16, Value), IngestError> {
        let url = format!("{}{path}", self.base);
        let payload = body.to_string();
        let req = match method {
            "PUT" => self.agent.put(&url),
            _ => self.agent.post(&url),
        };
        let mut resp = req
            .header("Content-Type", "application/json")
            .send(payload.as_bytes())
            .map_err(|e| IngestError::Sink(format!("{method} {url}: {e}")))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| IngestError::Sink(format!("{method} {url}: {e}")))?;
        let value = serde_json::from_str(&text).unwrap_or(Value::String(text));
        Ok((status, value))
    }
}

impl DocSink for HttpSink {
    fn prepare(&mut self) -> Result<(), IngestError> {
        let (status, body) = self.send("PUT", &format!("/{INDEX}"), &movie_mapping(self.shards))?;
        match status {
            200 => Ok(()),
            400 if body["error"]["type"] == "resource_already_exists_exception" => Ok(()),
            _ => Err(IngestError::Sink(format!("creating index failed ({status}): {body}"))),
        }
    }

    fn index(&mut self, movie: &MovieDoc) -> Result<String, IngestError> {
        let (status, body) = self.send("POST", &format!("/{INDEX}/{TYPE}"), &movie.to_json())?;
        if status != 201 {
            return Err(IngestError::Sink(format!("indexing failed ({status}): {body}")));
        }
        Ok(body["_id"].as_str().unwrap_or_default().to_string())
    }
}
