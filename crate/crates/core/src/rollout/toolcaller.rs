//! The search-wrapping sub-agent.
//!
//! Inner protocol, one agent reply per turn:
//! - `<search>query</search>` runs one search (top-k hits) and feeds the
//!   results back as the next user message;
//! - `<summary>text</summary>` ends the exchange;
//! - any other reply is taken as the summary verbatim.
//!
//! `<think>` blocks are ignored in all cases.

use serde::{Deserialize, Serialize};

use super::engine::{derive_seed, TransportError};
use super::policy::{Message, PolicyClient};
use super::retry::RetryPolicy;
use super::ObservationPacket;
use crate::protocol::TagSet;
use crate::search::{SearchClient, SearchHit};

/// Summary used when the agent exceeds its search budget or gives nothing usable.
pub const NO_CONCLUSIVE_RESULT: &str = "no conclusive result";
/// Observation text for a raw search with zero hits.
pub const NO_RESULTS: &str = "no results";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToolcallerBudget {
    pub max_search_calls: usize,
    pub top_k: usize,
}

impl Default for ToolcallerBudget {
    fn default() -> Self {
        Self {
            max_search_calls: 3,
            top_k: 5,
        }
    }
}

enum AgentReply {
    Search(String),
    Summary(String),
}

fn strip_blocks(text: &str, tag: &str) -> String {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let mut out = String::new();
    let mut rest = text;
    while let Some(start) = rest.find(&open) {
        out.push_str(&rest[..start]);
        match rest[start..].find(&close) {
            Some(end) => rest = &rest[start + end + close.len()..],
            None => {
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

fn inner_block<'a>(text: &'a str, tag: &str) -> Option<&'a str> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = text.find(&open)? + open.len();
    let end = text[start..].find(&close)? + start;
    Some(text[start..end].trim())
}

fn parse_reply(text: &str) -> AgentReply {
    let text = strip_blocks(text, "think");
    if let Some(q) = inner_block(&text, "search").filter(|q| !q.is_empty()) {
        return AgentReply::Search(q.to_string());
    }
    if let Some(s) = inner_block(&text, "summary") {
        return AgentReply::Summary(s.to_string());
    }
    AgentReply::Summary(text.trim().to_string())
}

pub(crate) fn format_hits(query: &str, hits: &[SearchHit]) -> String {
    if hits.is_empty() {
        return format!("Search results for \"{query}\": none.");
    }
    let mut out = format!("Search results for \"{query}\":");
    for (i, h) in hits.iter().enumerate() {
        out.push_str(&format!("\n[{}] {} ({})\n{}", i + 1, h.title, h.source, h.snippet));
    }
    out
}

fn system_prompt(budget: &ToolcallerBudget) -> String {
    format!(
        "{}\nSearch budget: at most {} searches, {} results each.",
        super::prompts::TOOLCALLER.trim_end(),
        budget.max_search_calls,
        budget.top_k
    )
}

/// Answers one Planner sub-query by driving `agent` against `search`.
///
/// Exceeding `max_search_calls` is not an error: the packet comes back with
/// the [`NO_CONCLUSIVE_RESULT`] summary and every hit gathered so far.
pub fn toolcaller_answer(
    subquery: &str,
    agent: &dyn PolicyClient,
    search: &dyn SearchClient,
    budget: ToolcallerBudget,
    retry: RetryPolicy,
    seed: u64,
) -> Result<ObservationPacket, TransportError> {
    let tags = TagSet::default();
    let mut conversation = vec![Message::system(system_prompt(&budget)), Message::user(subquery)];
    let mut hits: Vec<SearchHit> = Vec::new();
    let mut calls = 0usize;

    let summary = loop {
        let turn_seed = derive_seed(seed, &format!("toolcaller\u{1f}{}", conversation.len()));
        let generation = retry
            .run(|e: &super::PolicyError| e.is_transient(), || {
                agent.generate(&conversation, turn_seed)
            })
            .map_err(TransportError::Policy)?;
        conversation.push(Message::assistant(generation.text.clone()));

        match parse_reply(&generation.text) {
            AgentReply::Search(_) if calls >= budget.max_search_calls => {
                break NO_CONCLUSIVE_RESULT.to_string();
            }
            AgentReply::Search(query) => {
                let found = retry
                    .run(|e: &crate::search::SearchError| e.is_transient(), || {
                        search.search(&query, budget.top_k)
                    })
                    .map_err(TransportError::Search)?;
                calls += 1;
                for h in &found {
                    if !hits.iter().any(|seen| seen.source == h.source) {
                        hits.push(h.clone());
                    }
                }
                conversation.push(Message::user(format_hits(&query, &found)));
            }
            AgentReply::Summary(s) if s.trim().is_empty() => {
                break NO_CONCLUSIVE_RESULT.to_string();
            }
            AgentReply::Summary(s) => break tags.sanitize_payload(&s),
        }
    };

    Ok(ObservationPacket {
        subquery: subquery.to_string(),
        summary,
        hits,
        search_calls_used: calls,
    })
}
