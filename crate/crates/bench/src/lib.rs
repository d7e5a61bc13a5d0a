//! Deterministic inputs for the benchmarks.

use hopper_core::grpo::{GrpoConfig, GrpoGroup, TokenizedRollout};
use hopper_core::search::{CorpusDocument, FixtureCorpus};
use hopper_core::{SegmentKind, Terminal, Trajectory};

/// A trajectory with `rounds` tool calls and observations of `obs_words` words.
pub fn trajectory(rounds: usize, obs_words: usize) -> Trajectory {
    let obs: String = (0..obs_words).map(|i| format!("w{i} ")).collect();
    let mut parts = Vec::new();
    for r in 0..rounds {
        parts.push((SegmentKind::Think, format!("step {r}: look up the next entity")));
        parts.push((SegmentKind::ToolCall, format!("Who was the parent of person {r}?")));
        parts.push((SegmentKind::Observation, obs.clone()));
    }
    parts.push((SegmentKind::Think, "done".to_string()));
    parts.push((SegmentKind::Answer, "Lady Oriel Brask".to_string()));
    Trajectory::from_parts("bench", parts, Terminal::Answered)
}

/// Splitmix-style generator so inputs need no RNG crate.
fn unit(state: &mut u64) -> f64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    ((z ^ (z >> 31)) >> 11) as f64 / (1u64 << 53) as f64
}

/// A group of `g` rollouts with `len` tokens each, a quarter of them masked.
pub fn group(g: usize, len: usize, cfg: &GrpoConfig) -> GrpoGroup {
    let mut s = 7u64;
    let rollouts = (0..g)
        .map(|_| {
            let old: Vec<f64> = (0..len).map(|_| -3.0 * unit(&mut s) - 0.01).collect();
            TokenizedRollout {
                token_ids: (1..=len as u32).collect(),
                logprobs_new: old.iter().map(|o| o + 0.4 * (unit(&mut s) - 0.5)).collect(),
                logprobs_ref: old.iter().map(|o| o + 0.2 * (unit(&mut s) - 0.5)).collect(),
                logprobs_old: old,
                loss_mask: (0..len).map(|t| t % 4 != 0).collect(),
            }
        })
        .collect();
    let rewards = (0..g).map(|_| 3.0 * unit(&mut s) - 2.0).collect();
    GrpoGroup::new("bench", rollouts, rewards, cfg).expect("bench group is valid")
}

/// A synthetic corpus of `n` documents over a small shared vocabulary.
pub fn corpus(n: usize) -> FixtureCorpus {
    const VOCAB: &[&str] = &[
        "river", "castle", "queen", "mother", "born", "author", "atlas", "mountain", "first",
        "climbed", "north", "vellmar", "kessa", "carrow", "daughter", "prince",
    ];
    let mut s = 11u64;
    let docs = (0..n)
        .map(|i| {
            let body: Vec<&str> = (0..40)
                .map(|_| VOCAB[(unit(&mut s) * VOCAB.len() as f64) as usize])
                .collect();
            CorpusDocument {
                doc_id: format!("d{i:05}"),
                title: format!("Document {i}"),
                body: body.join(" ") + ".",
            }
        })
        .collect();
    FixtureCorpus::new(docs).expect("bench corpus is valid")
}
