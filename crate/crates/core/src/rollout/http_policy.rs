//! Chat-completions client for a remote policy endpoint.
//!
//! Request body: `{model, messages: [{role, content}], temperature, max_tokens,
//! seed, logprobs?}`. The response may carry the generated text either as a
//! top-level `text` field or in the usual `choices[0].message.content`, and
//! token logprobs either as a top-level `token_logprobs: [{token_id, logprob}]`
//! or in `choices[0].logprobs.content`, where each entry has a numeric
//! `token_id` or a token string of the form `token_id:<n>`.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::policy::{Generation, Message, PolicyClient, PolicyError, TokenLogprob};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChatCompletionsConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub logprobs: bool,
    pub timeout_secs: u64,
}

impl Default for ChatCompletionsConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "planner".into(),
            temperature: 1.0,
            max_tokens: 1024,
            logprobs: false,
            timeout_secs: 120,
        }
    }
}

pub struct ChatCompletionsClient {
    agent: ureq::Agent,
    config: ChatCompletionsConfig,
    api_key: Option<String>,
}

impl ChatCompletionsClient {
    pub fn new(config: ChatCompletionsConfig, api_key: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            config,
            api_key,
        }
    }

    pub fn request_body(&self, conversation: &[Message], seed: u64) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": conversation,
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
            "seed": seed,
        });
        if self.config.logprobs {
            body["logprobs"] = Value::Bool(true);
        }
        body
    }
}

fn parse_token_id(entry: &Value) -> Option<u32> {
    if let Some(id) = entry.get("token_id").and_then(Value::as_u64) {
        return u32::try_from(id).ok();
    }
    entry
        .get("token")
        .and_then(Value::as_str)
        .and_then(|t| t.strip_prefix("token_id:"))
        .and_then(|n| n.parse().ok())
}

fn parse_logprobs(entries: &[Value]) -> Option<Vec<TokenLogprob>> {
    entries
        .iter()
        .map(|e| {
            let logprob = e.get("logprob").and_then(Value::as_f64)?;
            let token_id = parse_token_id(e)?;
            (logprob <= 0.0).then_some(TokenLogprob { token_id, logprob })
        })
        .collect()
}

/// Maps a response body to a [`Generation`]. Logprobs that cannot be tied to
/// token ids are dropped rather than guessed.
pub(crate) fn parse_response(body: &Value) -> Result<Generation, PolicyError> {
    let choice = body.get("choices").and_then(|c| c.get(0));
    let text = body
        .get("text")
        .and_then(Value::as_str)
        .or_else(|| {
            choice
                .and_then(|c| c.get("message"))
                .and_then(|m| m.get("content"))
                .and_then(Value::as_str)
        })
        .ok_or_else(|| PolicyError::Rejected("response carries no text".into()))?;
    let token_logprobs = body
        .get("token_logprobs")
        .and_then(Value::as_array)
        .or_else(|| {
            choice
                .and_then(|c| c.get("logprobs"))
                .and_then(|l| l.get("content"))
                .and_then(Value::as_array)
        })
        .and_then(|entries| parse_logprobs(entries));
    Ok(Generation {
        text: text.to_string(),
        token_logprobs,
    })
}

impl PolicyClient for ChatCompletionsClient {
    fn generate(&self, conversation: &[Message], seed: u64) -> Result<Generation, PolicyError> {
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(self.request_body(conversation, seed))
            .map_err(|e| PolicyError::Transport(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(PolicyError::Transport(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(PolicyError::Rejected(format!("HTTP {status}")));
        }
        let body: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| PolicyError::Transport(e.to_string()))?;
        parse_response(&body)
    }
}
