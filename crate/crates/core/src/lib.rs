//! Hierarchical planner/tool-agent rollouts, reward scoring, GRPO mathematics
//! and the evaluation harness around them.

pub mod bench;
pub mod grpo;
pub mod metrics;
pub mod protocol;
pub mod rollout;
pub mod search;

pub use metrics::{score_trajectory, CemVariant, GoldAnswerSet, RewardRecord};
pub use protocol::{Segment, SegmentKind, Terminal, Trajectory};
pub use rollout::{RolloutConfig, RolloutEngine, RunMode};
