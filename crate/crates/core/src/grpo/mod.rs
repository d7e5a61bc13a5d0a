//! Group-relative policy optimization: advantages, observation masking, the
//! clipped surrogate with KL penalty, a toy policy to exercise it end to end,
//! and batch export for an external trainer.

mod advantages;
mod export;
mod mask;
mod objective;
mod tokenize;
pub mod toy;

pub use advantages::compute_advantages;
pub use export::{
    assemble_group, export_batch, import_batch, read_batch, write_batch, BatchGroup, BatchHeader,
    BatchRecord, RolloutText, FORMAT_VERSION,
};
pub use mask::{build_loss_mask, classify_tokens, tokenize_rollout, TokenRole};
pub use objective::{
    grpo_objective, kl_divergence_estimate, objective_gradient, GrpoGroup, ObjectiveReport,
    TokenizedRollout,
};
pub use tokenize::{HashTokenizer, TokenSpan, Tokenizer};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoConfig {
    /// Rollouts per prompt (G).
    pub group_size: usize,
    /// Prompts per training step.
    pub batch_prompts: usize,
    pub clip_epsilon: f64,
    pub kl_beta: f64,
    pub advantage_std_floor: f64,
    /// Token id written over observation tokens in exported batches.
    pub mask_pad_token_id: u32,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 12,
            batch_prompts: 3,
            clip_epsilon: 0.2,
            kl_beta: 0.04,
            advantage_std_floor: 1e-6,
            mask_pad_token_id: tokenize::PAD_TOKEN_ID,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        let bad = |m: &str| Err(GrpoError::InvalidConfig(m.to_string()));
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return bad("clip_epsilon must lie in (0, 1)");
        }
        if self.kl_beta.is_nan() || self.kl_beta < 0.0 {
            return bad("kl_beta must be non-negative");
        }
        if self.group_size < 2 {
            return bad("group_size must be at least 2");
        }
        if self.advantage_std_floor.is_nan() || self.advantage_std_floor <= 0.0 {
            return bad("advantage_std_floor must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GrpoError {
    #[error("group has {0} rollouts; at least 2 are required")]
    GroupTooSmall(usize),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("rollout {0} has no unmasked tokens")]
    NoUnmaskedTokens(usize),
    #[error("tokenization does not tile the text: {0}")]
    SpanMismatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("training diverged at step {0}")]
    DivergenceDetected(usize),
    #[error("batch file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
