//! Observation masking over a tokenized rollout.
//!
//! The tokenized text is `prompt ++ training_text`, where the training text is
//! the canonical serialization followed by any rejected emission. Token spans
//! are char offsets into that concatenation.

use std::ops::Range;

use super::objective::TokenizedRollout;
use super::tokenize::{TokenSpan, Tokenizer};
use super::{GrpoConfig, GrpoError};
use crate::protocol::{observation_char_spans, SegmentKind, TagSet, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenRole {
    Prompt,
    Generated,
    Observation,
}

fn training_len(t: &Trajectory) -> usize {
    t.serialized_len() + t.rejected_emission.as_ref().map_or(0, |r| r.chars().count())
}

fn check_tiling(tokenization: &[TokenSpan], total: usize) -> Result<(), GrpoError> {
    let mut at = 0usize;
    for (i, tok) in tokenization.iter().enumerate() {
        if tok.span.start != at || tok.span.end <= tok.span.start {
            return Err(GrpoError::SpanMismatch(format!(
                "token {i} spans {:?}, expected to start at {at}",
                tok.span
            )));
        }
        at = tok.span.end;
    }
    if at != total {
        return Err(GrpoError::SpanMismatch(format!(
            "tokens cover {at} chars, text has {total}"
        )));
    }
    Ok(())
}

/// Assigns each token a role. A token touching the prompt is a prompt token;
/// otherwise a token touching any observation span (tags included) is an
/// observation token.
pub fn classify_tokens(
    t: &Trajectory,
    tokenization: &[TokenSpan],
    prompt_chars: usize,
) -> Result<Vec<TokenRole>, GrpoError> {
    check_tiling(tokenization, prompt_chars + training_len(t))?;
    let obs: Vec<Range<usize>> = observation_char_spans(t)
        .into_iter()
        .map(|r| r.start + prompt_chars..r.end + prompt_chars)
        .collect();
    let mut next = 0usize;
    Ok(tokenization
        .iter()
        .map(|tok| {
            if tok.span.start < prompt_chars {
                return TokenRole::Prompt;
            }
            // Spans and observations both ascend, so skip the ones behind us.
            while next < obs.len() && obs[next].end <= tok.span.start {
                next += 1;
            }
            match obs.get(next) {
                Some(o) if o.start < tok.span.end => TokenRole::Observation,
                _ => TokenRole::Generated,
            }
        })
        .collect())
}

/// True exactly on generated tokens.
pub fn build_loss_mask(
    t: &Trajectory,
    tokenization: &[TokenSpan],
    prompt_chars: usize,
) -> Result<Vec<bool>, GrpoError> {
    Ok(classify_tokens(t, tokenization, prompt_chars)?
        .into_iter()
        .map(|r| r == TokenRole::Generated)
        .collect())
}

fn shifted(tokenizer: &dyn Tokenizer, text: &str, offset: usize) -> Vec<TokenSpan> {
    tokenizer
        .tokenize(text)
        .into_iter()
        .map(|t| TokenSpan {
            id: t.id,
            span: t.span.start + offset..t.span.end + offset,
        })
        .collect()
}

/// Tokenizes `prompt ++ training_text` piecewise (prompt, then each rendered
/// segment, then the rejected emission) so token boundaries never cross a tag.
///
/// Observation token ids are rewritten to the pad id. `logprobs_old` come from
/// the policy's per-emission reports where their token ids line up with ours;
/// otherwise they are zero and the returned flag is false. `new` and `ref`
/// start equal to `old`.
pub fn tokenize_rollout(
    prompt: &str,
    t: &Trajectory,
    tokenizer: &dyn Tokenizer,
    cfg: &GrpoConfig,
) -> Result<(TokenizedRollout, bool), GrpoError> {
    let tags = TagSet::default();
    let prompt_chars = prompt.chars().count();
    let mut spans = shifted(tokenizer, prompt, 0);
    // Token index ranges of each emission's generated text.
    let mut emissions: Vec<Range<usize>> = Vec::new();
    let mut open_emission: Option<usize> = None;

    for seg in t.segments() {
        let first = spans.len();
        let rendered = tags.render_segment(seg.kind, &seg.text);
        spans.extend(shifted(tokenizer, &rendered, prompt_chars + seg.char_span.start));
        if seg.kind == SegmentKind::Observation {
            continue;
        }
        let start = *open_emission.get_or_insert(first);
        if seg.kind.is_terminal() {
            emissions.push(start..spans.len());
            open_emission = None;
        }
    }
    if let Some(r) = &t.rejected_emission {
        let first = spans.len();
        spans.extend(shifted(tokenizer, r, prompt_chars + t.serialized_len()));
        emissions.push(first..spans.len());
    }

    let roles = classify_tokens(t, &spans, prompt_chars)?;
    let mut logprobs = vec![0.0; spans.len()];
    let mut aligned = !emissions.is_empty() && t.emission_logprobs.len() == emissions.len();
    if aligned {
        for (range, reported) in emissions.iter().zip(&t.emission_logprobs) {
            let ours = &spans[range.clone()];
            if ours.len() != reported.len()
                || ours.iter().zip(reported).any(|(a, b)| a.id != b.token_id)
            {
                aligned = false;
                continue;
            }
            for (slot, lp) in logprobs[range.clone()].iter_mut().zip(reported) {
                *slot = lp.logprob;
            }
        }
    }

    let token_ids = spans
        .iter()
        .zip(&roles)
        .map(|(s, r)| {
            if *r == TokenRole::Observation {
                cfg.mask_pad_token_id
            } else {
                s.id
            }
        })
        .collect();
    let loss_mask = roles.iter().map(|r| *r == TokenRole::Generated).collect();
    Ok((
        TokenizedRollout {
            token_ids,
            logprobs_new: logprobs.clone(),
            logprobs_ref: logprobs.clone(),
            logprobs_old: logprobs,
            loss_mask,
        },
        aligned,
    ))
}
