use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::policy::{Message, PolicyClient, PolicyError};
use super::retry::RetryPolicy;
use super::toolcaller::{toolcaller_answer, ToolcallerBudget, NO_RESULTS};
use super::{prompts, ObservationPacket};
use crate::protocol::{SegmentKind, TagSet, Terminal, Trajectory};
use crate::search::{SearchClient, SearchError, SearchHit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    /// Planner delegates sub-queries to the Toolcaller agent.
    #[default]
    Hierarchical,
    /// Planner queries search directly and reads raw snippets.
    FlatRawSearch,
    /// One generation, no tools.
    #[serde(rename = "direct-io")]
    DirectIO,
    /// One search over the question, then one generation.
    #[serde(rename = "direct-io-plus-search")]
    DirectIOPlusSearch,
}

impl RunMode {
    pub const ALL: [RunMode; 4] = [
        RunMode::Hierarchical,
        RunMode::FlatRawSearch,
        RunMode::DirectIO,
        RunMode::DirectIOPlusSearch,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RunMode::Hierarchical => "hierarchical",
            RunMode::FlatRawSearch => "flat-raw-search",
            RunMode::DirectIO => "direct-io",
            RunMode::DirectIOPlusSearch => "direct-io-plus-search",
        }
    }

    fn system_prompt(self) -> &'static str {
        match self {
            RunMode::Hierarchical => prompts::PLANNER,
            RunMode::FlatRawSearch => prompts::FLAT_SEARCH,
            RunMode::DirectIO | RunMode::DirectIOPlusSearch => prompts::DIRECT_IO,
        }
    }
}

impl std::str::FromStr for RunMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RunMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown run mode {s:?}"))
    }
}

impl std::fmt::Display for RunMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("policy endpoint: {0}")]
    Policy(PolicyError),
    #[error("search endpoint: {0}")]
    Search(SearchError),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RolloutError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("max_rounds must be at least 1")]
    NoRounds,
    #[error(transparent)]
    Transport(#[from] TransportError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RolloutConfig {
    pub mode: RunMode,
    pub max_rounds: usize,
    pub toolcaller: ToolcallerBudget,
    pub retry: RetryPolicy,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            mode: RunMode::Hierarchical,
            max_rounds: 10,
            toolcaller: ToolcallerBudget::default(),
            retry: RetryPolicy::default(),
        }
    }
}

/// SplitMix64 over an FNV-1a hash of `label`, keyed by `base`.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = base ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchItem {
    pub prompt_id: String,
    pub question: String,
    /// Sampling seed for this rollout.
    pub seed: u64,
}

/// Drives rollouts for one configuration. Clients are borrowed so one set of
/// endpoints can serve several engines.
pub struct RolloutEngine<'a> {
    pub planner: &'a dyn PolicyClient,
    pub toolcaller: &'a dyn PolicyClient,
    pub search: &'a dyn SearchClient,
    pub config: RolloutConfig,
}

impl<'a> RolloutEngine<'a> {
    pub fn new(
        planner: &'a dyn PolicyClient,
        toolcaller: &'a dyn PolicyClient,
        search: &'a dyn SearchClient,
        config: RolloutConfig,
    ) -> Self {
        Self {
            planner,
            toolcaller,
            search,
            config,
        }
    }

    fn generate(&self, conversation: &[Message], seed: u64) -> Result<super::Generation, TransportError> {
        self.config
            .retry
            .run(PolicyError::is_transient, || self.planner.generate(conversation, seed))
            .map_err(TransportError::Policy)
    }

    fn raw_search(&self, query: &str) -> Result<ObservationPacket, TransportError> {
        let top_k = self.config.toolcaller.top_k;
        let hits: Vec<SearchHit> = self
            .config
            .retry
            .run(SearchError::is_transient, || self.search.search(query, top_k))
            .map_err(TransportError::Search)?;
        let summary = if hits.is_empty() {
            NO_RESULTS.to_string()
        } else {
            let joined = hits
                .iter()
                .map(|h| h.snippet.as_str())
                .collect::<Vec<_>>()
                .join("\n");
            TagSet::default().sanitize_payload(&joined)
        };
        Ok(ObservationPacket {
            subquery: query.to_string(),
            summary,
            hits,
            search_calls_used: 1,
        })
    }

    fn observe(&self, subquery: &str, seed: u64) -> Result<ObservationPacket, TransportError> {
        match self.config.mode {
            RunMode::Hierarchical => toolcaller_answer(
                subquery,
                self.toolcaller,
                self.search,
                self.config.toolcaller,
                self.config.retry,
                seed,
            ),
            _ => self.raw_search(subquery),
        }
    }

    /// Runs one rollout to a terminal state.
    ///
    /// A malformed generation or a tool call past `max_rounds` ends the
    /// rollout; the offending text is kept in `rejected_emission`, never
    /// appended as segments. Transport failures (after retries) are errors.
    pub fn run_rollout(
        &self,
        question: &str,
        prompt_id: &str,
        seed: u64,
    ) -> Result<Trajectory, RolloutError> {
        if question.trim().is_empty() {
            return Err(RolloutError::EmptyQuestion);
        }
        if self.config.max_rounds == 0 {
            return Err(RolloutError::NoRounds);
        }
        let tags = TagSet::default();
        let mode = self.config.mode;
        let mut t = Trajectory::new(prompt_id);
        let mut conversation = vec![
            Message::system(mode.system_prompt().trim_end()),
            Message::user(question.trim()),
        ];

        if mode == RunMode::DirectIOPlusSearch {
            let packet = self.raw_search(question.trim())?;
            conversation.push(Message::user(tags.render_segment(SegmentKind::Observation, &packet.summary)));
            t.push(SegmentKind::Observation, packet.summary.clone());
            t.packets.push(packet);
        }
        let single_shot = matches!(mode, RunMode::DirectIO | RunMode::DirectIOPlusSearch);

        loop {
            let turn = t.emission_logprobs.len();
            let turn_seed = derive_seed(seed, &format!("planner\u{1f}{turn}"));
            let generation = self.generate(&conversation, turn_seed)?;
            conversation.push(Message::assistant(generation.text.clone()));

            let segments = match tags.parse_emission(&generation.text) {
                Ok(s) => s,
                Err(e) => {
                    log::debug!("{prompt_id}: malformed emission ({e})");
                    t.terminal = Terminal::MalformedOutput;
                    t.rejected_emission = Some(generation.text);
                    t.emission_logprobs
                        .push(generation.token_logprobs.unwrap_or_default());
                    return Ok(t);
                }
            };
            let terminal = segments.last().expect("parsed emission has a terminal").kind;
            if terminal == SegmentKind::ToolCall {
                let refuse = if single_shot {
                    Some(Terminal::MalformedOutput)
                } else if t.rounds_used() >= self.config.max_rounds {
                    Some(Terminal::RoundLimitExceeded)
                } else {
                    None
                };
                if let Some(reason) = refuse {
                    t.terminal = reason;
                    t.rejected_emission = Some(generation.text);
                    t.emission_logprobs
                        .push(generation.token_logprobs.unwrap_or_default());
                    return Ok(t);
                }
            }

            for s in &segments {
                t.push(s.kind, s.text.clone());
            }
            t.emission_logprobs
                .push(generation.token_logprobs.unwrap_or_default());

            if terminal == SegmentKind::Answer {
                t.terminal = Terminal::Answered;
                return Ok(t);
            }

            let subquery = segments.last().expect("terminal").text.trim().to_string();
            let packet = self.observe(&subquery, derive_seed(turn_seed, "observe"))?;
            conversation.push(Message::user(tags.render_segment(SegmentKind::Observation, &packet.summary)));
            t.push(SegmentKind::Observation, packet.summary.clone());
            t.packets.push(packet);
        }
    }

    /// Runs independent rollouts on up to `concurrency` threads. Results come
    /// back in input order; a failed item never affects the others.
    pub fn run_batch(
        &self,
        items: &[BatchItem],
        concurrency: usize,
    ) -> Vec<Result<Trajectory, RolloutError>> {
        let workers = concurrency.clamp(1, items.len().max(1));
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Result<Trajectory, RolloutError>>>> =
            Mutex::new(vec![None; items.len()]);

        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(item) = items.get(i) else { break };
                    let result = self.run_rollout(&item.question, &item.prompt_id, item.seed);
                    slots.lock().unwrap_or_else(|p| p.into_inner())[i] = Some(result);
                });
            }
        });

        slots
            .into_inner()
            .unwrap_or_else(|p| p.into_inner())
            .into_iter()
            .map(|r| r.expect("every slot filled"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rollout::{NoNetworkPolicy, SampledEmission, SamplingStubPolicy, ScriptedPolicy};
    use crate::search::{CorpusDocument, FixtureCorpus, NoNetworkSearch};
    use std::collections::{HashMap, HashSet};

    fn corpus() -> FixtureCorpus {
        FixtureCorpus::new(vec![
            CorpusDocument {
                doc_id: "a".into(),
                title: "Alpha".into(),
                body: "Alpha was born in Ulm and liked <obs> tags.".into(),
            },
            CorpusDocument {
                doc_id: "b".into(),
                title: "Beta".into(),
                body: "Beta lives in Bern.".into(),
            },
        ])
        .unwrap()
    }

    fn cfg(mode: RunMode, max_rounds: usize) -> RolloutConfig {
        RolloutConfig {
            mode,
            max_rounds,
            retry: RetryPolicy::immediate(3),
            ..Default::default()
        }
    }

    #[test]
    fn immediate_answer_uses_no_rounds() {
        let planner = ScriptedPolicy::new().with_script("q", ["<think>easy</think><answer>Ulm</answer>"]);
        let none = NoNetworkPolicy::default();
        let search = NoNetworkSearch::default();
        let engine = RolloutEngine::new(&planner, &none, &search, cfg(RunMode::Hierarchical, 10));
        let t = engine.run_rollout("q", "p0", 0).unwrap();
        assert_eq!(t.rounds_used(), 0);
        assert_eq!(t.terminal, Terminal::Answered);
        assert_eq!(search.calls(), 0);
    }

    #[test]
    fn eleventh_tool_call_hits_round_limit() {
        let planner = ScriptedPolicy::new().with_script("q", ["<tool_calling>again</tool_calling>"]);
        let agent = ScriptedPolicy::new().with_fallback("<summary>nothing</summary>");
        let search = NoNetworkSearch::default();
        let engine = RolloutEngine::new(&planner, &agent, &search, cfg(RunMode::Hierarchical, 10));
        let t = engine.run_rollout("q", "p0", 0).unwrap();
        assert_eq!(t.terminal, Terminal::RoundLimitExceeded);
        assert_eq!(t.rounds_used(), 10);
        assert_eq!(t.rejected_emission.as_deref(), Some("<tool_calling>again</tool_calling>"));
        t.validate(10).unwrap();
    }

    #[test]
    fn malformed_emission_terminates() {
        let planner = ScriptedPolicy::new().with_script("q", ["<think>oops"]);
        let none = NoNetworkPolicy::default();
        let search = NoNetworkSearch::default();
        let engine = RolloutEngine::new(&planner, &none, &search, cfg(RunMode::Hierarchical, 10));
        let t = engine.run_rollout("q", "p0", 0).unwrap();
        assert_eq!(t.terminal, Terminal::MalformedOutput);
        assert!(t.segments().is_empty());
    }

    #[test]
    fn flat_mode_observation_is_raw_snippets() {
        let planner = ScriptedPolicy::new().with_script(
            "q",
            ["<tool_calling>alpha born</tool_calling>", "<answer>Ulm</answer>"],
        );
        let none = NoNetworkPolicy::default();
        let c = corpus();
        let engine = RolloutEngine::new(&planner, &none, &c, cfg(RunMode::FlatRawSearch, 10));
        let t = engine.run_rollout("q", "p0", 0).unwrap();
        assert_eq!(none.calls(), 0);
        let obs = &t.segments()[1];
        assert_eq!(obs.kind, SegmentKind::Observation);
        let expected: Vec<String> = c.search_hits("alpha born", 5).into_iter().map(|h| h.snippet).collect();
        assert_eq!(obs.text, TagSet::default().sanitize_payload(&expected.join("\n")));
        t.validate(10).unwrap();
    }

    #[test]
    fn direct_io_makes_one_call_without_tools() {
        let planner = ScriptedPolicy::new().with_script("q", ["<tool_calling>x</tool_calling>"]);
        let none = NoNetworkPolicy::default();
        let search = NoNetworkSearch::default();
        let engine = RolloutEngine::new(&planner, &none, &search, cfg(RunMode::DirectIO, 10));
        let t = engine.run_rollout("q", "p0", 0).unwrap();
        assert_eq!(t.terminal, Terminal::MalformedOutput);
        assert_eq!(search.calls(), 0);

        let planner = ScriptedPolicy::new().with_script("q", ["<answer>Ulm</answer>"]);
        let engine = RolloutEngine::new(&planner, &none, &search, cfg(RunMode::DirectIO, 10));
        let t = engine.run_rollout("q", "p0", 0).unwrap();
        assert!(t.segments().iter().all(|s| s.kind != SegmentKind::Observation));
    }

    #[test]
    fn direct_io_plus_search_prepends_observation() {
        let planner = ScriptedPolicy::new().with_script("Where was Alpha born?", ["<answer>Ulm</answer>"]);
        let none = NoNetworkPolicy::default();
        let c = corpus();
        let engine = RolloutEngine::new(&planner, &none, &c, cfg(RunMode::DirectIOPlusSearch, 10));
        let t = engine.run_rollout("Where was Alpha born?", "p0", 0).unwrap();
        assert_eq!(t.segments()[0].kind, SegmentKind::Observation);
        assert_eq!(t.answer(), Some("Ulm"));
        assert!(t.segments()[0].text.contains("‹obs>"));
        t.validate(10).unwrap();
    }

    #[test]
    fn transport_failure_is_an_error_not_malformed() {
        let planner = NoNetworkPolicy::default();
        let search = NoNetworkSearch::default();
        let engine = RolloutEngine::new(&planner, &planner, &search, cfg(RunMode::Hierarchical, 10));
        assert!(matches!(
            engine.run_rollout("q", "p", 0),
            Err(RolloutError::Transport(TransportError::Policy(PolicyError::Offline)))
        ));
    }

    #[test]
    fn group_of_twelve_seeded_rollouts_are_distinct() {
        let planner = SamplingStubPolicy {
            scripts: HashMap::new(),
            default: vec![vec![SampledEmission {
                text: "<think>guess {sample}</think><answer>{sample}</answer>".into(),
                weight: 1.0,
            }]],
        };
        let none = NoNetworkPolicy::default();
        let search = NoNetworkSearch::default();
        let engine = RolloutEngine::new(&planner, &none, &search, cfg(RunMode::Hierarchical, 10));
        let items: Vec<BatchItem> = (0..12)
            .map(|k| BatchItem {
                prompt_id: "p".into(),
                question: "q".into(),
                seed: derive_seed(42, &format!("p#{k}")),
            })
            .collect();
        let out = engine.run_batch(&items, 4);
        let texts: HashSet<String> = out.iter().map(|r| r.as_ref().unwrap().to_string()).collect();
        assert_eq!(texts.len(), 12);
    }

    #[test]
    fn batch_isolates_failures_and_keeps_order() {
        let planner = ScriptedPolicy::new().with_fallback("<answer>x</answer>");
        let none = NoNetworkPolicy::default();
        let search = NoNetworkSearch::default();
        let engine = RolloutEngine::new(&planner, &none, &search, cfg(RunMode::Hierarchical, 10));
        let items: Vec<BatchItem> = (0..6)
            .map(|i| BatchItem {
                prompt_id: format!("p{i}"),
                question: if i == 3 { "  ".into() } else { format!("q{i}") },
                seed: i as u64,
            })
            .collect();
        let out = engine.run_batch(&items, 3);
        for (i, r) in out.iter().enumerate() {
            if i == 3 {
                assert_eq!(r, &Err(RolloutError::EmptyQuestion));
            } else {
                assert_eq!(r.as_ref().unwrap().prompt_id, format!("p{i}"));
            }
        }
    }

    #[test]
    fn seeds_are_well_spread() {
        let seeds: HashSet<u64> = (0..1000).map(|i| derive_seed(7, &format!("x{i}"))).collect();
        assert_eq!(seeds.len(), 1000);
        assert_ne!(derive_seed(1, "a"), derive_seed(2, "a"));
    }
}
