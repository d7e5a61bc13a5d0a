//! The clipped surrogate with KL penalty, applied per token.
//!
//! For rollout `i` with advantage `A_i` and unmasked tokens `t`:
//!
//! ```text
//! ρ_t      = exp(new_t - old_t)
//! surr_i   = mean_t min(ρ_t A_i, clip(ρ_t, 1-ε, 1+ε) A_i)
//! kl_i     = mean_t exp(ref_t - new_t) - (ref_t - new_t) - 1
//! J        = (1/G) Σ_i (surr_i - β kl_i)
//! ```

use serde::{Deserialize, Serialize};

use super::{compute_advantages, GrpoConfig, GrpoError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizedRollout {
    pub token_ids: Vec<u32>,
    pub logprobs_new: Vec<f64>,
    pub logprobs_old: Vec<f64>,
    pub logprobs_ref: Vec<f64>,
    /// True where the token contributes to the objective.
    pub loss_mask: Vec<bool>,
}

impl TokenizedRollout {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn unmasked(&self) -> usize {
        self.loss_mask.iter().filter(|m| **m).count()
    }

    pub fn check_lengths(&self) -> Result<(), GrpoError> {
        let n = self.token_ids.len();
        let lens = [
            self.logprobs_new.len(),
            self.logprobs_old.len(),
            self.logprobs_ref.len(),
            self.loss_mask.len(),
        ];
        if lens.iter().any(|l| *l != n) {
            return Err(GrpoError::LengthMismatch(format!(
                "token_ids has {n} entries, logprob/mask lists have {lens:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrpoGroup {
    pub prompt_id: String,
    pub rollouts: Vec<TokenizedRollout>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl GrpoGroup {
    /// Builds a group, deriving advantages from `rewards`.
    pub fn new(
        prompt_id: impl Into<String>,
        rollouts: Vec<TokenizedRollout>,
        rewards: Vec<f64>,
        cfg: &GrpoConfig,
    ) -> Result<Self, GrpoError> {
        let advantages = compute_advantages(&rewards, cfg)?;
        let group = Self {
            prompt_id: prompt_id.into(),
            rollouts,
            rewards,
            advantages,
        };
        group.validate()?;
        Ok(group)
    }

    pub fn size(&self) -> usize {
        self.rollouts.len()
    }

    pub fn validate(&self) -> Result<(), GrpoError> {
        let g = self.rollouts.len();
        if g < 2 {
            return Err(GrpoError::GroupTooSmall(g));
        }
        if self.rewards.len() != g || self.advantages.len() != g {
            return Err(GrpoError::LengthMismatch(format!(
                "{g} rollouts, {} rewards, {} advantages",
                self.rewards.len(),
                self.advantages.len()
            )));
        }
        for r in &self.rollouts {
            r.check_lengths()?;
        }
        if self
            .rewards
            .iter()
            .chain(&self.advantages)
            .any(|v| !v.is_finite())
        {
            return Err(GrpoError::Validation("non-finite reward or advantage".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveReport {
    pub objective: f64,
    /// Ratios at unmasked positions, per rollout.
    pub per_token_ratios: Vec<Vec<f64>>,
    /// Share of unmasked tokens where the clipped branch won the min.
    pub clip_fraction: f64,
    /// Mean of the per-rollout KL estimates.
    pub kl: f64,
}

#[inline]
fn kl_term(new: f64, reference: f64) -> f64 {
    // exp_m1 keeps the value exact near d = 0 and never below zero.
    let d = reference - new;
    d.exp_m1() - d
}

/// Mean over unmasked tokens of `exp(ref - new) - (ref - new) - 1`.
pub fn kl_divergence_estimate(
    logprobs_new: &[f64],
    logprobs_ref: &[f64],
    loss_mask: &[bool],
) -> Result<f64, GrpoError> {
    if logprobs_new.len() != logprobs_ref.len() || logprobs_new.len() != loss_mask.len() {
        return Err(GrpoError::LengthMismatch(format!(
            "new {}, ref {}, mask {}",
            logprobs_new.len(),
            logprobs_ref.len(),
            loss_mask.len()
        )));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((new, reference), keep) in logprobs_new.iter().zip(logprobs_ref).zip(loss_mask) {
        if *keep {
            sum += kl_term(*new, *reference);
            n += 1;
        }
    }
    if n == 0 {
        return Err(GrpoError::NoUnmaskedTokens(0));
    }
    Ok(sum / n as f64)
}

fn check_group(group: &GrpoGroup) -> Result<(), GrpoError> {
    group.validate()?;
    for (i, r) in group.rollouts.iter().enumerate() {
        if r.unmasked() == 0 {
            return Err(GrpoError::NoUnmaskedTokens(i));
        }
    }
    Ok(())
}

pub fn grpo_objective(group: &GrpoGroup, cfg: &GrpoConfig) -> Result<ObjectiveReport, GrpoError> {
    check_group(group)?;
    let (lo, hi) = (1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon);
    let mut total = 0.0;
    let mut kl_total = 0.0;
    let mut clipped = 0usize;
    let mut counted = 0usize;
    let mut ratios = Vec::with_capacity(group.size());

    for (r, &adv) in group.rollouts.iter().zip(&group.advantages) {
        let mut surr = 0.0;
        let mut kl = 0.0;
        let mut n = 0usize;
        let mut rollout_ratios = Vec::with_capacity(r.unmasked());
        for t in 0..r.len() {
            if !r.loss_mask[t] {
                continue;
            }
            let ratio = (r.logprobs_new[t] - r.logprobs_old[t]).exp();
            let unclipped = ratio * adv;
            let clipped_term = ratio.clamp(lo, hi) * adv;
            if clipped_term < unclipped {
                clipped += 1;
            }
            surr += unclipped.min(clipped_term);
            kl += kl_term(r.logprobs_new[t], r.logprobs_ref[t]);
            n += 1;
            rollout_ratios.push(ratio);
        }
        counted += n;
        let kl = kl / n as f64;
        total += surr / n as f64 - cfg.kl_beta * kl;
        kl_total += kl;
        ratios.push(rollout_ratios);
    }

    let g = group.size() as f64;
    Ok(ObjectiveReport {
        objective: total / g,
        per_token_ratios: ratios,
        clip_fraction: clipped as f64 / counted as f64,
        kl: kl_total / g,
    })
}

/// Partial derivatives of [`grpo_objective`] with respect to `logprobs_new`.
/// Masked positions get zero. Where the clipped branch is strictly smaller the
/// surrogate is flat in `new`.
pub fn objective_gradient(group: &GrpoGroup, cfg: &GrpoConfig) -> Result<Vec<Vec<f64>>, GrpoError> {
    check_group(group)?;
    let (lo, hi) = (1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon);
    let g = group.size() as f64;
    Ok(group
        .rollouts
        .iter()
        .zip(&group.advantages)
        .map(|(r, &adv)| {
            let weight = 1.0 / (g * r.unmasked() as f64);
            (0..r.len())
                .map(|t| {
                    if !r.loss_mask[t] {
                        return 0.0;
                    }
                    let ratio = (r.logprobs_new[t] - r.logprobs_old[t]).exp();
                    let d_surr = if ratio.clamp(lo, hi) * adv < ratio * adv {
                        0.0
                    } else {
                        ratio * adv
                    };
                    let d_kl = 1.0 - (r.logprobs_ref[t] - r.logprobs_new[t]).exp();
                    weight * (d_surr - cfg.kl_beta * d_kl)
                })
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rollout(new: &[f64], old: &[f64], reference: &[f64], mask: &[bool]) -> TokenizedRollout {
        TokenizedRollout {
            token_ids: (1..=new.len() as u32).collect(),
            logprobs_new: new.to_vec(),
            logprobs_old: old.to_vec(),
            logprobs_ref: reference.to_vec(),
            loss_mask: mask.to_vec(),
        }
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_divergence_estimate(&[-1.0, -2.0], &[-1.0, -2.0], &[true, true]).unwrap(), 0.0);
        let k = kl_divergence_estimate(&[-1.0], &[-0.5], &[true]).unwrap();
        assert!((k - 0.148_721_270_700_128_2).abs() < 1e-12);
        assert!((k - 0.14872).abs() < 1e-5);
        assert!(matches!(
            kl_divergence_estimate(&[0.0], &[0.0], &[false]),
            Err(GrpoError::NoUnmaskedTokens(_))
        ));
    }

    #[test]
    fn single_token_clip_case() {
        let cfg = GrpoConfig {
            kl_beta: 0.0,
            ..Default::default()
        };
        let ln2 = 2f64.ln();
        let group = GrpoGroup {
            prompt_id: "p".into(),
            rollouts: vec![
                rollout(&[ln2 - 1.0], &[-1.0], &[-1.0], &[true]),
                rollout(&[-1.0], &[-1.0], &[-1.0], &[true]),
            ],
            rewards: vec![1.0, 0.0],
            advantages: vec![1.0, 0.0],
        };
        let rep = grpo_objective(&group, &cfg).unwrap();
        // Rollout 0: min(2·1, 1.2·1) = 1.2 (clipped); rollout 1 contributes 0.
        assert!((rep.objective - 0.6).abs() < 1e-12);
        assert!((rep.per_token_ratios[0][0] - 2.0).abs() < 1e-12);
        assert_eq!(rep.clip_fraction, 0.5);
    }

    #[test]
    fn identity_policies_give_mean_advantage() {
        let group = GrpoGroup {
            prompt_id: "p".into(),
            rollouts: vec![
                rollout(&[-0.3, -0.2], &[-0.3, -0.2], &[-0.3, -0.2], &[true, true]),
                rollout(&[-0.1], &[-0.1], &[-0.1], &[true]),
            ],
            rewards: vec![0.0, 0.0],
            advantages: vec![0.5, 0.25],
        };
        let rep = grpo_objective(&group, &GrpoConfig::default()).unwrap();
        assert!((rep.objective - 0.375).abs() < 1e-15);
        assert_eq!(rep.clip_fraction, 0.0);
        assert_eq!(rep.kl, 0.0);
    }

    #[test]
    fn errors() {
        let cfg = GrpoConfig::default();
        let mut group = GrpoGroup {
            prompt_id: "p".into(),
            rollouts: vec![
                rollout(&[-0.3], &[-0.3], &[-0.3], &[false]),
                rollout(&[-0.1], &[-0.1], &[-0.1], &[true]),
            ],
            rewards: vec![0.0, 1.0],
            advantages: vec![-1.0, 1.0],
        };
        assert!(matches!(
            grpo_objective(&group, &cfg),
            Err(GrpoError::NoUnmaskedTokens(0))
        ));
        group.rollouts[0].logprobs_old.push(0.0);
        assert!(matches!(
            grpo_objective(&group, &cfg),
            Err(GrpoError::LengthMismatch(_))
        ));
    }
}
