//! Planner loop, Toolcaller sub-agent and baseline run modes.

mod engine;
mod http_policy;
mod policy;
mod retry;
mod toolcaller;

pub use engine::{
    derive_seed, BatchItem, RolloutConfig, RolloutEngine, RolloutError, RunMode, TransportError,
};
pub use http_policy::{ChatCompletionsClient, ChatCompletionsConfig};
pub use policy::{
    Generation, InflightLimit, Message, NoNetworkPolicy, PolicyClient, PolicyError, Role,
    SampledEmission, SamplingStubPolicy, ScriptedPolicy, TokenLogprob,
};
pub use retry::RetryPolicy;
pub use toolcaller::{toolcaller_answer, ToolcallerBudget, NO_CONCLUSIVE_RESULT, NO_RESULTS};

use serde::{Deserialize, Serialize};

use crate::search::SearchHit;

/// What the Planner receives for one sub-query, plus where it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationPacket {
    pub subquery: String,
    pub summary: String,
    pub hits: Vec<SearchHit>,
    pub search_calls_used: usize,
}

/// Versioned prompt assets.
pub mod prompts {
    pub const PLANNER: &str = include_str!("../../prompts/planner_v1.txt");
    pub const FLAT_SEARCH: &str = include_str!("../../prompts/flat_search_v1.txt");
    pub const DIRECT_IO: &str = include_str!("../../prompts/direct_io_v1.txt");
    pub const TOOLCALLER: &str = include_str!("../../prompts/toolcaller_v1.txt");
    pub const VERSION: &str = "v1";
}
