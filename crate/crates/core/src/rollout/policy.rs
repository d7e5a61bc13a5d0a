use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::engine::derive_seed;
use crate::grpo::{HashTokenizer, Tokenizer};
use crate::protocol::TagSet;
use crate::search::{SearchClient, SearchError, SearchHit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token_id: u32,
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Generation {
    pub text: String,
    pub token_logprobs: Option<Vec<TokenLogprob>>,
}

impl Generation {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            token_logprobs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PolicyError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("request rejected: {0}")]
    Rejected(String),
    #[error("network access is disabled")]
    Offline,
}

impl PolicyError {
    pub fn is_transient(&self) -> bool {
        matches!(self, PolicyError::Transport(_))
    }
}

/// Chat-style text generator. Implementations are shared across concurrent
/// rollouts. `seed` selects the sample; the same conversation and seed must
/// give the same output for any mock implementation.
pub trait PolicyClient: Send + Sync {
    fn generate(&self, conversation: &[Message], seed: u64) -> Result<Generation, PolicyError>;
}

impl<P: PolicyClient + ?Sized> PolicyClient for &P {
    fn generate(&self, conversation: &[Message], seed: u64) -> Result<Generation, PolicyError> {
        (**self).generate(conversation, seed)
    }
}

impl<P: PolicyClient + ?Sized> PolicyClient for std::sync::Arc<P> {
    fn generate(&self, conversation: &[Message], seed: u64) -> Result<Generation, PolicyError> {
        (**self).generate(conversation, seed)
    }
}

impl<P: PolicyClient + ?Sized> PolicyClient for Box<P> {
    fn generate(&self, conversation: &[Message], seed: u64) -> Result<Generation, PolicyError> {
        (**self).generate(conversation, seed)
    }
}

fn first_user_message(conversation: &[Message]) -> &str {
    conversation
        .iter()
        .find(|m| m.role == Role::User)
        .map_or("", |m| m.content.trim())
}

fn assistant_turns(conversation: &[Message]) -> usize {
    conversation
        .iter()
        .filter(|m| m.role == Role::Assistant)
        .count()
}

/// Replays fixed emissions keyed by the first user message (the question or
/// sub-query). Turn `n` of a conversation gets entry `n`; past the end the
/// last entry repeats.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptedPolicy {
    #[serde(default)]
    pub scripts: HashMap<String, Vec<String>>,
    /// Used for any key without a script.
    #[serde(default)]
    pub fallback: Option<String>,
}

impl ScriptedPolicy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_script<I, S>(mut self, key: impl Into<String>, turns: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.scripts
            .insert(key.into(), turns.into_iter().map(Into::into).collect());
        self
    }

    pub fn with_fallback(mut self, emission: impl Into<String>) -> Self {
        self.fallback = Some(emission.into());
        self
    }

    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

impl PolicyClient for ScriptedPolicy {
    fn generate(&self, conversation: &[Message], _seed: u64) -> Result<Generation, PolicyError> {
        let key = first_user_message(conversation);
        let turn = assistant_turns(conversation);
        let text = match self.scripts.get(key) {
            Some(turns) if !turns.is_empty() => turns[turn.min(turns.len() - 1)].clone(),
            _ => self
                .fallback
                .clone()
                .ok_or_else(|| PolicyError::Rejected(format!("no script for {key:?}")))?,
        };
        Ok(Generation::text(text))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledEmission {
    pub text: String,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

/// Stochastic stand-in for a sampled LLM. For each turn it draws one of the
/// weighted candidate emissions, replacing every `{sample}` with a fresh
/// random integer in `0..1_000_000`.
///
/// The reported token logprobs are aligned with [`HashTokenizer`] over the
/// emission's segments and sum to the log-probability of the drawn emission.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SamplingStubPolicy {
    #[serde(default)]
    pub scripts: HashMap<String, Vec<Vec<SampledEmission>>>,
    #[serde(default)]
    pub default: Vec<Vec<SampledEmission>>,
}

impl SamplingStubPolicy {
    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

impl PolicyClient for SamplingStubPolicy {
    fn generate(&self, conversation: &[Message], seed: u64) -> Result<Generation, PolicyError> {
        let key = first_user_message(conversation);
        let turn = assistant_turns(conversation);
        let turns = self
            .scripts
            .get(key)
            .filter(|t| !t.is_empty())
            .unwrap_or(&self.default);
        let candidates = turns
            .get(turn.min(turns.len().saturating_sub(1)))
            .filter(|c| !c.is_empty())
            .ok_or_else(|| PolicyError::Rejected(format!("no candidates for {key:?}")))?;

        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("{key}\u{1f}{turn}")));
        let total: f64 = candidates.iter().map(|c| c.weight.max(0.0)).sum();
        if total.is_nan() || total <= 0.0 {
            return Err(PolicyError::Rejected("candidate weights sum to zero".into()));
        }
        let mut draw = rng.random::<f64>() * total;
        let mut chosen = &candidates[candidates.len() - 1];
        for c in candidates {
            let w = c.weight.max(0.0);
            if draw < w {
                chosen = c;
                break;
            }
            draw -= w;
        }

        let mut logprob = (chosen.weight.max(0.0) / total).ln();
        let mut text = String::with_capacity(chosen.text.len());
        let mut parts = chosen.text.split("{sample}");
        text.push_str(parts.next().unwrap_or_default());
        for part in parts {
            text.push_str(&rng.random_range(0..1_000_000u32).to_string());
            text.push_str(part);
            logprob -= 1_000_000f64.ln();
        }

        let token_ids = emission_token_ids(&text);
        let token_logprobs = (!token_ids.is_empty()).then(|| {
            let per_token = logprob / token_ids.len() as f64;
            token_ids
                .into_iter()
                .map(|token_id| TokenLogprob {
                    token_id,
                    logprob: per_token,
                })
                .collect()
        });
        Ok(Generation {
            text,
            token_logprobs,
        })
    }
}

/// Token ids of an emission as the trajectory will hold it: segment by
/// segment, with inter-segment whitespace dropped. Unparseable text is
/// tokenized whole.
pub(crate) fn emission_token_ids(text: &str) -> Vec<u32> {
    let tags = TagSet::default();
    let tok = HashTokenizer::default();
    match tags.parse_emission(text) {
        Ok(segments) => segments
            .iter()
            .flat_map(|s| tok.tokenize(&tags.render_segment(s.kind, &s.text)))
            .map(|t| t.id)
            .collect(),
        Err(_) => tok.tokenize(text).into_iter().map(|t| t.id).collect(),
    }
}

/// Stand-in for a live endpoint when network use is forbidden.
#[derive(Debug, Default)]
pub struct NoNetworkPolicy {
    calls: AtomicUsize,
}

impl NoNetworkPolicy {
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl PolicyClient for NoNetworkPolicy {
    fn generate(&self, _conversation: &[Message], _seed: u64) -> Result<Generation, PolicyError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Err(PolicyError::Offline)
    }
}

/// Caps in-flight requests to one endpoint.
pub struct InflightLimit<C> {
    inner: C,
    max: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
    peak: AtomicUsize,
}

impl<C> InflightLimit<C> {
    pub fn new(inner: C, max: usize) -> Self {
        Self {
            inner,
            max: max.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
            peak: AtomicUsize::new(0),
        }
    }

    /// Highest number of simultaneous requests observed.
    pub fn peak(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    fn with_slot<T>(&self, f: impl FnOnce(&C) -> T) -> T {
        {
            let mut n = self.in_flight.lock().unwrap_or_else(|p| p.into_inner());
            while *n >= self.max {
                n = self.freed.wait(n).unwrap_or_else(|p| p.into_inner());
            }
            *n += 1;
            self.peak.fetch_max(*n, Ordering::SeqCst);
        }
        let out = f(&self.inner);
        *self.in_flight.lock().unwrap_or_else(|p| p.into_inner()) -= 1;
        self.freed.notify_one();
        out
    }
}

impl<C: PolicyClient> PolicyClient for InflightLimit<C> {
    fn generate(&self, conversation: &[Message], seed: u64) -> Result<Generation, PolicyError> {
        self.with_slot(|c| c.generate(conversation, seed))
    }
}

impl<C: SearchClient> SearchClient for InflightLimit<C> {
    fn search(&self, query: &str, top_k: usize) -> Result<Vec<SearchHit>, SearchError> {
        self.with_slot(|c| c.search(query, top_k))
    }
}
