//! Sampling GRPO groups for export.

use super::config::HarnessConfig;
use super::dataset::QASample;
use crate::grpo::{assemble_group, BatchGroup, GrpoError, Tokenizer};
use crate::rollout::{derive_seed, BatchItem, RolloutEngine};

/// Samples `cfg.grpo.group_size` rollouts per prompt and assembles one group
/// each. Prompts whose group falls below two usable rollouts are skipped.
pub fn sample_groups(
    samples: &[QASample],
    engine: &RolloutEngine<'_>,
    tokenizer: &dyn Tokenizer,
    cfg: &HarnessConfig,
) -> Result<Vec<BatchGroup>, GrpoError> {
    let mut groups = Vec::with_capacity(samples.len());
    for s in samples {
        let items: Vec<BatchItem> = (0..cfg.grpo.group_size)
            .map(|i| BatchItem {
                prompt_id: s.id.clone(),
                question: s.question.clone(),
                seed: derive_seed(cfg.seed, &format!("{}\u{1f}{i}", s.id)),
            })
            .collect();
        let results = engine.run_batch(&items, cfg.concurrency);
        if let Some(g) = assemble_group(
            &s.id,
            &s.question,
            &results,
            &s.golds,
            cfg.cem_variant,
            tokenizer,
            &cfg.grpo,
        )? {
            groups.push(g);
        }
    }
    Ok(groups)
}
