//! Training-batch files for an external trainer.
//!
//! Layout: one JSON header line, then one JSON record per rollout, grouped by
//! prompt in order. Floats are written in shortest round-trip form so a
//! reimported batch is bit-identical.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mask::tokenize_rollout;
use super::objective::{GrpoGroup, TokenizedRollout};
use super::tokenize::Tokenizer;
use super::{GrpoConfig, GrpoError};
use crate::metrics::{score_trajectory_with, CemVariant, GoldAnswerSet};
use crate::protocol::{observation_char_spans, Trajectory};
use crate::rollout::RolloutError;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchHeader {
    pub format_version: u32,
    pub config: GrpoConfig,
    pub groups: usize,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub prompt_id: String,
    pub rollout_index: usize,
    pub prompt: String,
    /// Serialized trajectory plus any rejected emission.
    pub text: String,
    /// Char spans into `text`, tags included.
    pub observation_spans: Vec<(usize, usize)>,
    pub token_ids: Vec<u32>,
    pub loss_mask: Vec<bool>,
    pub logprobs_old: Vec<f64>,
    pub logprobs_new: Vec<f64>,
    pub logprobs_ref: Vec<f64>,
    pub reward: f64,
    pub advantage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutText {
    pub text: String,
    pub observation_spans: Vec<Range<usize>>,
}

/// A group together with the texts its rollouts were tokenized from.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGroup {
    pub group: GrpoGroup,
    pub prompt: String,
    pub texts: Vec<RolloutText>,
}

impl BatchGroup {
    fn validate(&self) -> Result<(), GrpoError> {
        self.group.validate()?;
        if self.texts.len() != self.group.size() {
            return Err(GrpoError::Validation(format!(
                "group {} has {} rollouts but {} texts",
                self.group.prompt_id,
                self.group.size(),
                self.texts.len()
            )));
        }
        for (i, r) in self.group.rollouts.iter().enumerate() {
            let lps = r.logprobs_old.iter().chain(&r.logprobs_new).chain(&r.logprobs_ref);
            if lps.clone().any(|v| !v.is_finite()) {
                return Err(GrpoError::Validation(format!(
                    "group {} rollout {i} has a non-finite logprob",
                    self.group.prompt_id
                )));
            }
        }
        Ok(())
    }
}

/// Turns one prompt's rollout results into a group.
///
/// Failed rollouts and rollouts with nothing to train on are dropped. Returns
/// `None` when fewer than two survive.
pub fn assemble_group(
    prompt_id: &str,
    prompt: &str,
    results: &[Result<Trajectory, RolloutError>],
    golds: &GoldAnswerSet,
    variant: CemVariant,
    tokenizer: &dyn Tokenizer,
    cfg: &GrpoConfig,
) -> Result<Option<BatchGroup>, GrpoError> {
    let mut rollouts = Vec::new();
    let mut rewards = Vec::new();
    let mut texts = Vec::new();
    for (i, res) in results.iter().enumerate() {
        let t = match res {
            Ok(t) => t,
            Err(e) => {
                log::warn!("{prompt_id}: dropping rollout {i}: {e}");
                continue;
            }
        };
        let (tokenized, aligned) = tokenize_rollout(prompt, t, tokenizer, cfg)?;
        if tokenized.unmasked() == 0 {
            log::warn!("{prompt_id}: dropping rollout {i}: no generated tokens");
            continue;
        }
        if !aligned {
            log::debug!("{prompt_id}: rollout {i} has no aligned policy logprobs");
        }
        rewards.push(score_trajectory_with(t, golds, variant).reward);
        rollouts.push(tokenized);
        texts.push(RolloutText {
            text: t.training_text(),
            observation_spans: observation_char_spans(t),
        });
    }
    if rollouts.len() < 2 {
        log::warn!("{prompt_id}: only {} usable rollouts, skipping group", rollouts.len());
        return Ok(None);
    }
    Ok(Some(BatchGroup {
        group: GrpoGroup::new(prompt_id, rollouts, rewards, cfg)?,
        prompt: prompt.to_string(),
        texts,
    }))
}

pub fn write_batch<W: Write>(
    mut out: W,
    groups: &[BatchGroup],
    cfg: &GrpoConfig,
) -> Result<(), GrpoError> {
    cfg.validate()?;
    for g in groups {
        g.validate()?;
    }
    let header = BatchHeader {
        format_version: FORMAT_VERSION,
        config: cfg.clone(),
        groups: groups.len(),
        records: groups.iter().map(|g| g.group.size()).sum(),
    };
    writeln!(out, "{}", line(&header)?)?;
    for g in groups {
        let gr = &g.group;
        for (i, ((r, text), (reward, adv))) in gr
            .rollouts
            .iter()
            .zip(&g.texts)
            .zip(gr.rewards.iter().zip(&gr.advantages))
            .enumerate()
        {
            let record = BatchRecord {
                prompt_id: gr.prompt_id.clone(),
                rollout_index: i,
                prompt: g.prompt.clone(),
                text: text.text.clone(),
                observation_spans: text.observation_spans.iter().map(|s| (s.start, s.end)).collect(),
                token_ids: r.token_ids.clone(),
                loss_mask: r.loss_mask.clone(),
                logprobs_old: r.logprobs_old.clone(),
                logprobs_new: r.logprobs_new.clone(),
                logprobs_ref: r.logprobs_ref.clone(),
                reward: *reward,
                advantage: *adv,
            };
            writeln!(out, "{}", line(&record)?)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn line<T: Serialize>(v: &T) -> Result<String, GrpoError> {
    serde_json::to_string(v).map_err(|e| GrpoError::Validation(e.to_string()))
}

pub fn read_batch<R: Read>(input: R) -> Result<(BatchHeader, Vec<BatchGroup>), GrpoError> {
    let mut lines = BufReader::new(input).lines();
    let fmt = |line: usize, message: String| GrpoError::Format { line, message };
    let first = lines.next().ok_or_else(|| fmt(1, "empty file".into()))??;
    let header: BatchHeader =
        serde_json::from_str(&first).map_err(|e| fmt(1, e.to_string()))?;
    if header.format_version != FORMAT_VERSION {
        return Err(fmt(
            1,
            format!("unsupported format_version {}", header.format_version),
        ));
    }

    let mut groups: Vec<BatchGroup> = Vec::new();
    let mut count = 0usize;
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: BatchRecord = serde_json::from_str(&line).map_err(|e| fmt(lineno, e.to_string()))?;
        count += 1;
        let starts_group = groups
            .last()
            .is_none_or(|g| g.group.prompt_id != rec.prompt_id);
        if starts_group {
            groups.push(BatchGroup {
                group: GrpoGroup {
                    prompt_id: rec.prompt_id.clone(),
                    rollouts: Vec::new(),
                    rewards: Vec::new(),
                    advantages: Vec::new(),
                },
                prompt: rec.prompt.clone(),
                texts: Vec::new(),
            });
        }
        let g = groups.last_mut().expect("group was just pushed");
        if rec.rollout_index != g.group.rollouts.len() {
            return Err(fmt(
                lineno,
                format!(
                    "rollout_index {} out of order for {}",
                    rec.rollout_index, rec.prompt_id
                ),
            ));
        }
        g.group.rollouts.push(TokenizedRollout {
            token_ids: rec.token_ids,
            logprobs_new: rec.logprobs_new,
            logprobs_old: rec.logprobs_old,
            logprobs_ref: rec.logprobs_ref,
            loss_mask: rec.loss_mask,
        });
        g.group.rewards.push(rec.reward);
        g.group.advantages.push(rec.advantage);
        g.texts.push(RolloutText {
            text: rec.text,
            observation_spans: rec.observation_spans.into_iter().map(|(s, e)| s..e).collect(),
        });
    }
    if count != header.records || groups.len() != header.groups {
        return Err(GrpoError::Validation(format!(
            "header announces {} groups / {} records, file has {} / {count}",
            header.groups,
            header.records,
            groups.len()
        )));
    }
    for g in &groups {
        g.validate()?;
    }
    Ok((header, groups))
}

/// Writes to `path` via a temporary file in the same directory.
pub fn export_batch(groups: &[BatchGroup], cfg: &GrpoConfig, path: &Path) -> Result<(), GrpoError> {
    let mut buf = Vec::new();
    write_batch(&mut buf, groups, cfg)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &buf)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn import_batch(path: &Path) -> Result<(BatchHeader, Vec<BatchGroup>), GrpoError> {
    read_batch(fs::File::open(path)?)
}
