//! A categorical softmax sequence model small enough for exact logprobs and
//! analytic gradients, used to run the whole GRPO loop on a synthetic
//! target-string task.
//!
//! Position `p` emits token `v` with probability `softmax(logits[p])[v]`; the
//! sampled words are joined into an answer and scored like any trajectory.
//! Emitting the malformed marker anywhere makes the output malformed.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::objective::{grpo_objective, objective_gradient, GrpoGroup, TokenizedRollout};
use super::{GrpoConfig, GrpoError};
use crate::metrics::{score_trajectory, GoldAnswerSet};
use crate::protocol::{SegmentKind, Terminal, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyTask {
    pub vocab: Vec<String>,
    pub gold: String,
    pub seq_len: usize,
    /// Word whose appearance makes an output malformed.
    pub malformed_marker: String,
}

impl Default for ToyTask {
    fn default() -> Self {
        Self {
            vocab: ["capital", "of", "france", "paris", "rome", "berlin", "#"]
                .map(String::from)
                .to_vec(),
            gold: "capital of france".into(),
            seq_len: 3,
            malformed_marker: "#".into(),
        }
    }
}

impl ToyTask {
    /// Scores a token sequence through the regular trajectory reward.
    pub fn reward(&self, tokens: &[usize]) -> f64 {
        let words: Vec<&str> = tokens.iter().map(|t| self.vocab[*t].as_str()).collect();
        let text = words.join(" ");
        let t = if words.iter().any(|w| *w == self.malformed_marker) {
            let mut t = Trajectory::new("toy");
            t.rejected_emission = Some(text);
            t
        } else {
            Trajectory::from_parts("toy", [(SegmentKind::Answer, text)], Terminal::Answered)
        };
        let golds = GoldAnswerSet::single(self.gold.clone()).expect("toy gold is non-empty");
        score_trajectory(&t, &golds).reward
    }
}

/// Logit table, row-major by position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    pub seq_len: usize,
    pub vocab_size: usize,
    pub logits: Vec<f64>,
}

impl ToyPolicy {
    pub fn uniform(seq_len: usize, vocab_size: usize) -> Self {
        Self {
            seq_len,
            vocab_size,
            logits: vec![0.0; seq_len * vocab_size],
        }
    }

    pub fn random(seq_len: usize, vocab_size: usize, scale: f64, rng: &mut impl Rng) -> Self {
        Self {
            seq_len,
            vocab_size,
            logits: (0..seq_len * vocab_size)
                .map(|_| rng.random_range(-scale..scale))
                .collect(),
        }
    }

    fn row(&self, pos: usize) -> &[f64] {
        &self.logits[pos * self.vocab_size..(pos + 1) * self.vocab_size]
    }

    /// Log-probabilities of every token at `pos`.
    pub fn log_softmax(&self, pos: usize) -> Vec<f64> {
        let row = self.row(pos);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        row.iter().map(|x| x - lse).collect()
    }

    pub fn logprobs(&self, tokens: &[usize]) -> Vec<f64> {
        tokens
            .iter()
            .enumerate()
            .map(|(pos, v)| self.log_softmax(pos)[*v])
            .collect()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<usize> {
        (0..self.seq_len)
            .map(|pos| {
                let probs: Vec<f64> = self.log_softmax(pos).iter().map(|l| l.exp()).collect();
                let mut u: f64 = rng.random::<f64>();
                for (v, p) in probs.iter().enumerate() {
                    if u < *p {
                        return v;
                    }
                    u -= p;
                }
                self.vocab_size - 1
            })
            .collect()
    }

    /// Largest absolute logit difference.
    pub fn max_abs_diff(&self, other: &ToyPolicy) -> f64 {
        self.logits
            .iter()
            .zip(&other.logits)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Sampled token sequences and their rewards, one inner list per group.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyBatch {
    pub samples: Vec<Vec<Vec<usize>>>,
    pub rewards: Vec<Vec<f64>>,
}

impl ToyBatch {
    pub fn sample(
        policy: &ToyPolicy,
        task: &ToyTask,
        cfg: &GrpoConfig,
        rng: &mut impl Rng,
    ) -> Self {
        let samples: Vec<Vec<Vec<usize>>> = (0..cfg.batch_prompts.max(1))
            .map(|_| (0..cfg.group_size).map(|_| policy.sample(rng)).collect())
            .collect();
        let rewards = samples
            .iter()
            .map(|g| g.iter().map(|s| task.reward(s)).collect())
            .collect();
        Self { samples, rewards }
    }

    pub fn mean_reward(&self) -> f64 {
        let all: Vec<f64> = self.rewards.iter().flatten().copied().collect();
        all.iter().sum::<f64>() / all.len() as f64
    }

    /// Groups whose `new` logprobs come from `theta`.
    pub fn groups(
        &self,
        theta: &ToyPolicy,
        old: &ToyPolicy,
        reference: &ToyPolicy,
        cfg: &GrpoConfig,
    ) -> Result<Vec<GrpoGroup>, GrpoError> {
        self.samples
            .iter()
            .zip(&self.rewards)
            .enumerate()
            .map(|(gi, (samples, rewards))| {
                let rollouts = samples
                    .iter()
                    .map(|s| TokenizedRollout {
                        token_ids: s.iter().map(|v| *v as u32 + 1).collect(),
                        logprobs_new: theta.logprobs(s),
                        logprobs_old: old.logprobs(s),
                        logprobs_ref: reference.logprobs(s),
                        loss_mask: vec![true; s.len()],
                    })
                    .collect();
                GrpoGroup::new(format!("toy-{gi}"), rollouts, rewards.clone(), cfg)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchObjective {
    pub objective: f64,
    pub kl: f64,
    pub clip_fraction: f64,
}

/// Objective averaged over the batch's groups.
pub fn batch_objective(
    batch: &ToyBatch,
    theta: &ToyPolicy,
    old: &ToyPolicy,
    reference: &ToyPolicy,
    cfg: &GrpoConfig,
) -> Result<BatchObjective, GrpoError> {
    let groups = batch.groups(theta, old, reference, cfg)?;
    let n = groups.len() as f64;
    let mut out = BatchObjective {
        objective: 0.0,
        kl: 0.0,
        clip_fraction: 0.0,
    };
    for g in &groups {
        let rep = grpo_objective(g, cfg)?;
        out.objective += rep.objective / n;
        out.kl += rep.kl / n;
        out.clip_fraction += rep.clip_fraction / n;
    }
    Ok(out)
}

/// Gradient of [`batch_objective`] with respect to `theta.logits`, by the
/// chain rule through the softmax: `d log p(y) / d logit_v = 1[v = y] - p_v`.
pub fn batch_gradient(
    batch: &ToyBatch,
    theta: &ToyPolicy,
    old: &ToyPolicy,
    reference: &ToyPolicy,
    cfg: &GrpoConfig,
) -> Result<Vec<f64>, GrpoError> {
    let groups = batch.groups(theta, old, reference, cfg)?;
    let n = groups.len() as f64;
    let v = theta.vocab_size;
    let probs: Vec<Vec<f64>> = (0..theta.seq_len)
        .map(|p| theta.log_softmax(p).iter().map(|l| l.exp()).collect())
        .collect();
    let mut grad = vec![0.0; theta.logits.len()];
    for (g, samples) in groups.iter().zip(&batch.samples) {
        let d_new = objective_gradient(g, cfg)?;
        for (d_rollout, s) in d_new.iter().zip(samples) {
            for (pos, (d, y)) in d_rollout.iter().zip(s).enumerate() {
                for (tok, p) in probs[pos].iter().enumerate() {
                    let indicator = if tok == *y { 1.0 } else { 0.0 };
                    grad[pos * v + tok] += d * (indicator - p) / n;
                }
            }
        }
    }
    Ok(grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyTrainConfig {
    pub steps: usize,
    pub seed: u64,
    /// Initial step size of the backtracking line search.
    pub learning_rate: f64,
    /// Gradient steps taken on each sampled batch.
    pub updates_per_batch: usize,
    pub grpo: GrpoConfig,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            seed: 1,
            learning_rate: 1.0,
            updates_per_batch: 1,
            grpo: GrpoConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub mean_reward: f64,
    pub kl: f64,
    pub clip_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyRun {
    pub curve: Vec<CurvePoint>,
    pub initial: ToyPolicy,
    pub policy: ToyPolicy,
}

const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 30;

/// One ascent step with backtracking: the first step size (halving from
/// `lr`) that gains at least `c·η·|g|²` is taken. Returns false when none does.
fn ascend(
    theta: &mut ToyPolicy,
    batch: &ToyBatch,
    old: &ToyPolicy,
    reference: &ToyPolicy,
    cfg: &GrpoConfig,
    lr: f64,
) -> Result<bool, GrpoError> {
    let base = batch_objective(batch, theta, old, reference, cfg)?.objective;
    let grad = batch_gradient(batch, theta, old, reference, cfg)?;
    let norm2: f64 = grad.iter().map(|g| g * g).sum();
    if norm2 == 0.0 {
        return Ok(false);
    }
    let mut eta = lr;
    for _ in 0..MAX_HALVINGS {
        let mut trial = theta.clone();
        for (w, g) in trial.logits.iter_mut().zip(&grad) {
            *w += eta * g;
        }
        let value = batch_objective(batch, &trial, old, reference, cfg)?.objective;
        if value >= base + ARMIJO_C * eta * norm2 {
            *theta = trial;
            return Ok(true);
        }
        eta *= 0.5;
    }
    Ok(false)
}

/// Runs the full loop from a uniform policy, which is also the reference.
pub fn toy_policy_train(task: &ToyTask, cfg: &ToyTrainConfig) -> Result<ToyRun, GrpoError> {
    cfg.grpo.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let initial = ToyPolicy::uniform(task.seq_len, task.vocab.len());
    let mut theta = initial.clone();
    let mut curve = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let old = theta.clone();
        let batch = ToyBatch::sample(&old, task, &cfg.grpo, &mut rng);
        let mean_reward = batch.mean_reward();
        if mean_reward.is_nan() {
            return Err(GrpoError::DivergenceDetected(step));
        }
        for _ in 0..cfg.updates_per_batch {
            if !ascend(&mut theta, &batch, &old, &initial, &cfg.grpo, cfg.learning_rate)? {
                break;
            }
        }
        let after = batch_objective(&batch, &theta, &old, &initial, &cfg.grpo)?;
        if !after.objective.is_finite() || theta.logits.iter().any(|w| !w.is_finite()) {
            return Err(GrpoError::DivergenceDetected(step));
        }
        curve.push(CurvePoint {
            step,
            mean_reward,
            kl: after.kl,
            clip_fraction: after.clip_fraction,
        });
    }
    Ok(ToyRun {
        curve,
        initial,
        policy: theta,
    })
}

pub fn write_curve_csv<W: Write>(out: W, curve: &[CurvePoint]) -> Result<(), GrpoError> {
    let mut w = csv::Writer::from_writer(out);
    for p in curve {
        w.serialize(p)
            .map_err(|e| GrpoError::Validation(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
