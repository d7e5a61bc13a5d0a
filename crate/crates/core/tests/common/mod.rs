//! Generators and reference implementations shared by the integration tests.
//!
//! The reference code here is written straight from the formulas, without
//! calling into the crate's own math, so agreement means something.

#![allow(dead_code)]

use std::collections::HashMap;
use std::ops::Range;
use std::path::PathBuf;

use hopper_core::grpo::{TokenSpan, Tokenizer};
use hopper_core::protocol::TagSet;
use hopper_core::search::CorpusDocument;
use hopper_core::{SegmentKind, Terminal, Trajectory};
use rand::Rng;
use serde::Deserialize;

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

// ---------------------------------------------------------------- trajectories

const WORDS: &[&str] = &[
    "alpha", "Vellmar", "  spaced  ", "x<y", "a < b > c", "<thinking>", "</b>", "‹obs›", "naïve",
    "北京", "line\nbreak", "tab\there", "42", "?!", "&amp;", "<obs", "obs>", "<>", "emoji 🚀",
];

pub fn random_payload(rng: &mut impl Rng) -> String {
    let n = rng.random_range(1..5);
    let mut s: String = (0..n)
        .map(|_| WORDS[rng.random_range(0..WORDS.len())])
        .collect::<Vec<_>>()
        .join(" ");
    if s.trim().is_empty() {
        s.push('z');
    }
    s
}

/// A trajectory that satisfies every protocol rule: an optional leading
/// observation, rounds of `think* tool_call obs`, trailing thinks and an
/// optional answer.
pub fn random_trajectory(rng: &mut impl Rng) -> Trajectory {
    let mut parts: Vec<(SegmentKind, String)> = Vec::new();
    if rng.random_bool(0.2) {
        parts.push((SegmentKind::Observation, random_payload(rng)));
    }
    for _ in 0..rng.random_range(0..4) {
        for _ in 0..rng.random_range(0..3) {
            parts.push((SegmentKind::Think, random_payload(rng)));
        }
        parts.push((SegmentKind::ToolCall, random_payload(rng)));
        parts.push((SegmentKind::Observation, random_payload(rng)));
    }
    for _ in 0..rng.random_range(0..3) {
        parts.push((SegmentKind::Think, random_payload(rng)));
    }
    let answered = parts.is_empty() || rng.random_bool(0.7);
    if answered {
        parts.push((SegmentKind::Answer, random_payload(rng)));
    }
    let terminal = if answered {
        Terminal::Answered
    } else if rng.random_bool(0.5) {
        Terminal::MalformedOutput
    } else {
        Terminal::RoundLimitExceeded
    };
    Trajectory::from_parts(format!("p{}", rng.random::<u16>()), parts, terminal)
}

fn char_to_byte(s: &str, c: usize) -> usize {
    s.char_indices().nth(c).map_or(s.len(), |(b, _)| b)
}

/// Corrupts a serialized valid trajectory so that it can no longer parse.
pub fn mutate_invalid(rng: &mut impl Rng, t: &Trajectory) -> String {
    let text = t.to_string();
    let segs = t.segments();
    let tags = TagSet::default();
    let pick = rng.random_range(0..segs.len());
    let seg = &segs[pick];
    let at = |c: usize| char_to_byte(&text, c);
    match rng.random_range(0..8) {
        // Drop a closing tag.
        0 => {
            let close = tags.close(seg.kind);
            let end = at(seg.char_span.end);
            format!("{}{}", &text[..end - close.len()], &text[end..])
        }
        // Insert an unknown tag at a segment boundary.
        1 => {
            let b = at(seg.char_span.start);
            format!("{}<plan>x</plan>{}", &text[..b], &text[b..])
        }
        // Trailing free text.
        2 => format!("{text}trailing words"),
        // Blank out a payload.
        3 => {
            let (s, e) = (at(seg.char_span.start), at(seg.char_span.end));
            format!("{}{} {}{}", &text[..s], tags.open(seg.kind), tags.close(seg.kind), &text[e..])
        }
        // Two answers: whichever comes first is not last.
        4 => format!("{text}<answer>one</answer><answer>two</answer>"),
        // An observation that does not follow a tool call.
        5 => format!("<think>t</think><obs>o</obs>{text}"),
        // Truncate strictly inside a segment.
        6 => {
            let len = seg.char_span.end - seg.char_span.start;
            let cut = seg.char_span.start + rng.random_range(1..len);
            text[..at(cut)].to_string()
        }
        // A stray closing tag before everything.
        _ => format!("{}{text}", tags.close(seg.kind)),
    }
}

// ---------------------------------------------------------------- tokenizers

/// Tiles text into random-length chunks, ignoring any structure, so tokens
/// can straddle tag boundaries.
pub struct ChunkTokenizer {
    pub seed: u64,
}

impl Tokenizer for ChunkTokenizer {
    fn tokenize(&self, text: &str) -> Vec<TokenSpan> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(self.seed ^ text.len() as u64);
        let n = text.chars().count();
        let mut out = Vec::new();
        let mut at = 0;
        while at < n {
            let len = rng.random_range(1..=6).min(n - at);
            out.push(TokenSpan {
                id: rng.random_range(1..1000),
                span: at..at + len,
            });
            at += len;
        }
        out
    }
}

// ---------------------------------------------------------------- masking oracle

/// Char ranges of `<obs>...</obs>` blocks found by scanning the text itself.
pub fn scan_obs_blocks(text: &str) -> Vec<Range<usize>> {
    let chars: Vec<char> = text.chars().collect();
    let open: Vec<char> = "<obs>".chars().collect();
    let close: Vec<char> = "</obs>".chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i + open.len() <= chars.len() {
        if chars[i..i + open.len()] == open[..] {
            let mut j = i + open.len();
            while j + close.len() <= chars.len() && chars[j..j + close.len()] != close[..] {
                j += 1;
            }
            let end = j + close.len();
            out.push(i..end);
            i = end;
        } else {
            i += 1;
        }
    }
    out
}

/// Number of tokens that touch the prompt or any observation block, computed
/// char by char.
pub fn masked_token_oracle(
    prompt_chars: usize,
    training_text: &str,
    tokens: &[TokenSpan],
) -> usize {
    let total = prompt_chars + training_text.chars().count();
    let mut hidden = vec![false; total];
    for c in hidden.iter_mut().take(prompt_chars) {
        *c = true;
    }
    // Serialized part only: the rejected emission is never an observation.
    for r in scan_obs_blocks(training_text) {
        for c in r {
            hidden[prompt_chars + c] = true;
        }
    }
    tokens
        .iter()
        .filter(|t| hidden[t.span.clone()].iter().any(|h| *h))
        .count()
}

// ---------------------------------------------------------------- objective oracle

pub struct OracleRollout {
    pub new: Vec<f64>,
    pub old: Vec<f64>,
    pub reference: Vec<f64>,
    pub mask: Vec<bool>,
}

pub fn oracle_advantages(rewards: &[f64], floor: f64) -> Vec<f64> {
    let g = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / g;
    let sd = (rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / g).sqrt();
    if rewards.iter().all(|r| *r == rewards[0]) {
        return vec![0.0; rewards.len()];
    }
    rewards.iter().map(|r| (r - mean) / sd.max(floor)).collect()
}

/// `1/G Σ_i 1/|y_i| Σ_t [min(ρ A, clip(ρ) A) − β (π_ref/π − ln(π_ref/π) − 1)]`
/// with probabilities formed explicitly.
pub fn oracle_objective(
    rollouts: &[OracleRollout],
    advantages: &[f64],
    eps: f64,
    beta: f64,
) -> f64 {
    let mut sum = 0.0;
    for (r, a) in rollouts.iter().zip(advantages) {
        let mut inner = 0.0;
        let mut count = 0.0;
        for t in 0..r.new.len() {
            if !r.mask[t] {
                continue;
            }
            let p_new = r.new[t].exp();
            let p_old = r.old[t].exp();
            let p_ref = r.reference[t].exp();
            let rho = p_new / p_old;
            let clipped = if rho < 1.0 - eps {
                1.0 - eps
            } else if rho > 1.0 + eps {
                1.0 + eps
            } else {
                rho
            };
            let surrogate = f64::min(rho * a, clipped * a);
            let q = p_ref / p_new;
            let kl = q - q.ln() - 1.0;
            inner += surrogate - beta * kl;
            count += 1.0;
        }
        sum += inner / count;
    }
    sum / rollouts.len() as f64
}

// ---------------------------------------------------------------- metrics oracle

#[derive(Debug, Deserialize)]
pub struct MetricExpect {
    pub em: bool,
    pub cem: bool,
    pub f1: f64,
    pub reward: f64,
    pub normalized: String,
}

#[derive(Debug, Deserialize)]
pub struct MetricCase {
    pub prediction: String,
    pub golds: Vec<String>,
    pub format_valid: bool,
    pub expect: MetricExpect,
}

pub fn metric_cases() -> Vec<MetricCase> {
    let text = std::fs::read_to_string(fixtures_dir().join("metrics_cases.jsonl")).unwrap();
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

/// The trajectory a metric case describes: a lone answer, or a rejected
/// emission when the format is invalid.
pub fn case_trajectory(c: &MetricCase) -> Trajectory {
    if c.format_valid {
        Trajectory::from_parts("m", [(SegmentKind::Answer, c.prediction.clone())], Terminal::Answered)
    } else {
        let mut t = Trajectory::new("m");
        t.rejected_emission = Some(c.prediction.clone());
        t
    }
}

// ---------------------------------------------------------------- search oracle

fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Scores every document from scratch: `Σ (1 + ln tf) · ln(1 + N/df)` over
/// distinct query terms, then sorts by score and doc id.
pub fn oracle_ranking(docs: &[CorpusDocument], query: &str) -> Vec<(String, f64)> {
    let bags: Vec<HashMap<String, usize>> = docs
        .iter()
        .map(|d| {
            let mut m = HashMap::new();
            for w in words(&format!("{} {}", d.title, d.body)) {
                *m.entry(w).or_insert(0) += 1;
            }
            m
        })
        .collect();
    let mut q = words(query);
    q.sort();
    q.dedup();
    let n = docs.len() as f64;
    let mut scored: Vec<(String, f64)> = docs
        .iter()
        .zip(&bags)
        .map(|(d, bag)| {
            let s: f64 = q
                .iter()
                .filter_map(|term| {
                    let tf = *bag.get(term)? as f64;
                    let df = bags.iter().filter(|b| b.contains_key(term)).count() as f64;
                    Some((1.0 + tf.ln()) * (1.0 + n / df).ln())
                })
                .sum();
            (d.doc_id.clone(), s)
        })
        .filter(|(_, s)| *s > 0.0)
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored
}
