//! Answer normalization, EM / CEM / F1, and the trajectory reward.
//!
//! Normalization follows the SQuAD convention: lowercase, drop ASCII
//! punctuation, drop the articles `a`, `an`, `the` as whole tokens, collapse
//! whitespace. All metrics take the best score over gold aliases.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::protocol::{Terminal, Trajectory};

/// Reward assigned to anything that did not end in a well-formed answer.
pub const MALFORMED_REWARD: f64 = -2.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GoldAnswerSet(Vec<String>);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GoldError {
    #[error("gold answer set is empty")]
    Empty,
    #[error("gold answer {0:?} is empty after normalization")]
    BlankAlias(String),
}

impl GoldAnswerSet {
    pub fn new<I, S>(answers: I) -> Result<Self, GoldError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let answers: Vec<String> = answers.into_iter().map(Into::into).collect();
        if answers.is_empty() {
            return Err(GoldError::Empty);
        }
        if let Some(bad) = answers.iter().find(|a| normalize_answer(a).is_empty()) {
            return Err(GoldError::BlankAlias(bad.clone()));
        }
        Ok(Self(answers))
    }

    pub fn single(answer: impl Into<String>) -> Result<Self, GoldError> {
        Self::new([answer.into()])
    }

    pub fn aliases(&self) -> &[String] {
        &self.0
    }
}

/// Which containment rule counts as a cover exact match.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CemVariant {
    /// Gold tokens appear as a contiguous run of prediction tokens.
    #[default]
    TokenSubsequence,
    /// Normalized gold is a raw substring of the normalized prediction.
    Substring,
}

pub fn normalize_answer(s: &str) -> String {
    let lowered = s.to_lowercase();
    let no_punct: String = lowered
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    no_punct
        .split_whitespace()
        .filter(|tok| !matches!(*tok, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn tokens(s: &str) -> Vec<String> {
    normalize_answer(s)
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

fn f1_tokens(pred: &[String], gold: &[String]) -> f64 {
    if pred.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in gold {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in pred {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / pred.len() as f64;
    let recall = overlap as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

pub fn f1_score(prediction: &str, golds: &GoldAnswerSet) -> f64 {
    let pred = tokens(prediction);
    golds
        .aliases()
        .iter()
        .map(|g| f1_tokens(&pred, &tokens(g)))
        .fold(0.0, f64::max)
}

pub fn exact_match(prediction: &str, golds: &GoldAnswerSet) -> bool {
    let pred = normalize_answer(prediction);
    golds.aliases().iter().any(|g| normalize_answer(g) == pred)
}

pub fn cover_exact_match(prediction: &str, golds: &GoldAnswerSet) -> bool {
    cover_exact_match_with(prediction, golds, CemVariant::TokenSubsequence)
}

pub fn cover_exact_match_with(prediction: &str, golds: &GoldAnswerSet, variant: CemVariant) -> bool {
    match variant {
        CemVariant::TokenSubsequence => {
            let pred = tokens(prediction);
            golds.aliases().iter().any(|g| {
                let gold = tokens(g);
                !gold.is_empty() && pred.windows(gold.len()).any(|w| w == gold.as_slice())
            })
        }
        CemVariant::Substring => {
            let pred = normalize_answer(prediction);
            golds.aliases().iter().any(|g| {
                let gold = normalize_answer(g);
                !gold.is_empty() && pred.contains(&gold)
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub format_valid: bool,
    pub em: bool,
    pub cem: bool,
    pub f1: f64,
    pub reward: f64,
}

impl RewardRecord {
    pub fn malformed() -> Self {
        Self {
            format_valid: false,
            em: false,
            cem: false,
            f1: 0.0,
            reward: MALFORMED_REWARD,
        }
    }

    pub fn for_answer(answer: &str, golds: &GoldAnswerSet, variant: CemVariant) -> Self {
        let f1 = f1_score(answer, golds);
        Self {
            format_valid: true,
            em: exact_match(answer, golds),
            cem: cover_exact_match_with(answer, golds, variant),
            f1,
            reward: f1,
        }
    }
}

/// Reward is the answer's F1 when the rollout ended in a parsed answer, and
/// [`MALFORMED_REWARD`] for malformed or round-limited rollouts.
pub fn score_trajectory(t: &Trajectory, golds: &GoldAnswerSet) -> RewardRecord {
    score_trajectory_with(t, golds, CemVariant::default())
}

pub fn score_trajectory_with(
    t: &Trajectory,
    golds: &GoldAnswerSet,
    variant: CemVariant,
) -> RewardRecord {
    match (t.terminal, t.answer()) {
        (Terminal::Answered, Some(answer)) => RewardRecord::for_answer(answer, golds, variant),
        _ => RewardRecord::malformed(),
    }
}
