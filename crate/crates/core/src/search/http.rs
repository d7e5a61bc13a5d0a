//! Live search over a JSON HTTP API.
//!
//! Request: `POST {endpoint}` with `{"query": ..., "top_k": ...}` and an
//! optional bearer token. The response is mapped to [`SearchHit`]s through a
//! [`HitMapping`] naming the result array and per-hit fields.

use std::collections::HashSet;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{SearchClient, SearchError, SearchHit};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HitMapping {
    pub results_field: String,
    pub title_field: String,
    pub snippet_field: String,
    pub source_field: String,
}

impl Default for HitMapping {
    fn default() -> Self {
        Self {
            results_field: "results".into(),
            title_field: "title".into(),
            snippet_field: "snippet".into(),
            source_field: "url".into(),
        }
    }
}

impl HitMapping {
    /// Pulls hits out of a response body. Hits with an empty snippet or a
    /// repeated source are dropped.
    pub fn extract(&self, body: &Value, top_k: usize) -> Result<Vec<SearchHit>, SearchError> {
        let results = body
            .get(&self.results_field)
            .and_then(Value::as_array)
            .ok_or_else(|| {
                SearchError::Transport(format!(
                    "response has no `{}` array",
                    self.results_field
                ))
            })?;
        let text = |v: &Value, field: &str| {
            v.get(field)
                .and_then(Value::as_str)
                .unwrap_or_default()
                .trim()
                .to_string()
        };
        let mut seen = HashSet::new();
        Ok(results
            .iter()
            .map(|r| SearchHit {
                title: text(r, &self.title_field),
                snippet: text(r, &self.snippet_field),
                source: text(r, &self.source_field),
            })
            .filter(|h| !h.snippet.is_empty() && seen.insert(h.source.clone()))
            .take(top_k)
            .collect())
    }
}

pub struct HttpSearchClient {
    agent: ureq::Agent,
    endpoint: String,
    api_key: Option<String>,
    mapping: HitMapping,
}

impl HttpSearchClient {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, mapping: HitMapping) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(30)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            endpoint: endpoint.into(),
            api_key,
            mapping,
        }
    }
}

impl SearchClient for HttpSearchClient {
    fn search(&self, query: &str, top_k: usize) -> Result<Vec<SearchHit>, SearchError> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(serde_json::json!({ "query": query, "top_k": top_k }))
            .map_err(|e| SearchError::Transport(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(SearchError::Transport(format!("HTTP {}", resp.status())));
        }
        let body: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| SearchError::Transport(e.to_string()))?;
        self.mapping.extract(&body, top_k)
    }
}
