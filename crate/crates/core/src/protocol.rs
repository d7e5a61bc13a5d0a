//! Tag grammar for Planner emissions and whole trajectories.
//!
//! A Planner emission is zero or more `<think>` blocks followed by exactly one
//! terminal: a `<tool_calling>` sub-query or an `<answer>`. A trajectory
//! interleaves emissions with engine-inserted `<obs>` blocks:
//!
//! ```text
//! <think>need birthplace</think><tool_calling>Where was X born?</tool_calling><obs>Ulm</obs><answer>Ulm</answer>
//! ```
//!
//! Spans are measured in Unicode scalar values (`char`s), not bytes, so that
//! consumers in other languages can index the serialized text directly.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::rollout::{ObservationPacket, TokenLogprob};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Think,
    ToolCall,
    Observation,
    Answer,
}

impl SegmentKind {
    pub const ALL: [SegmentKind; 4] = [
        SegmentKind::Think,
        SegmentKind::ToolCall,
        SegmentKind::Observation,
        SegmentKind::Answer,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, SegmentKind::ToolCall | SegmentKind::Answer)
    }
}

/// One tag-delimited block. `text` excludes the tags, `char_span` includes them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub kind: SegmentKind,
    pub text: String,
    pub char_span: Range<usize>,
}

impl Segment {
    pub fn same_content(&self, other: &Segment) -> bool {
        self.kind == other.kind && self.text == other.text
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    Answered,
    MalformedOutput,
    RoundLimitExceeded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParseErrorKind {
    UnclosedTag,
    UnknownTag,
    MultipleTerminals,
    MissingTerminal,
    EmptyPayload,
    TrailingGarbage,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{kind:?} at char {position}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    /// Char offset where the problem was detected.
    pub position: usize,
}

impl ParseError {
    fn new(kind: ParseErrorKind, position: usize) -> Self {
        Self { kind, position }
    }
}

/// Tag names for each segment kind. The answer tag is not fixed by any
/// upstream convention, so it can be swapped; the others rarely need to be.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TagSet {
    pub think: String,
    pub tool_call: String,
    pub observation: String,
    pub answer: String,
}

impl Default for TagSet {
    fn default() -> Self {
        Self {
            think: "think".into(),
            tool_call: "tool_calling".into(),
            observation: "obs".into(),
            answer: "answer".into(),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum TagEdge {
    Open,
    Close,
}

impl TagSet {
    pub fn name(&self, kind: SegmentKind) -> &str {
        match kind {
            SegmentKind::Think => &self.think,
            SegmentKind::ToolCall => &self.tool_call,
            SegmentKind::Observation => &self.observation,
            SegmentKind::Answer => &self.answer,
        }
    }

    pub fn open(&self, kind: SegmentKind) -> String {
        format!("<{}>", self.name(kind))
    }

    pub fn close(&self, kind: SegmentKind) -> String {
        format!("</{}>", self.name(kind))
    }

    /// Recognizes a protocol tag at the start of `rest`.
    fn tag_at(&self, rest: &str) -> Option<(SegmentKind, TagEdge, usize)> {
        let body = rest.strip_prefix('<')?;
        let (edge, body) = match body.strip_prefix('/') {
            Some(b) => (TagEdge::Close, b),
            None => (TagEdge::Open, body),
        };
        for kind in SegmentKind::ALL {
            let name = self.name(kind);
            if body.starts_with(name) && body[name.len()..].starts_with('>') {
                let len = 1 + usize::from(edge == TagEdge::Close) + name.len() + 1;
                return Some((kind, edge, len));
            }
        }
        None
    }

    /// True when `text` contains any protocol tag literal.
    pub fn contains_tag(&self, text: &str) -> bool {
        text.match_indices('<').any(|(i, _)| self.tag_at(&text[i..]).is_some())
    }

    /// Defuses protocol tag literals in externally sourced text by replacing the
    /// opening `<` with `‹`. Everything else is kept verbatim.
    pub fn sanitize_payload(&self, text: &str) -> String {
        let mut out = String::with_capacity(text.len());
        let mut last = 0;
        for (i, _) in text.match_indices('<') {
            if self.tag_at(&text[i..]).is_some() {
                out.push_str(&text[last..i]);
                out.push('‹');
                last = i + 1;
            }
        }
        out.push_str(&text[last..]);
        out
    }

    /// Splits text into tagged segments without applying any ordering grammar.
    pub fn scan_segments(&self, text: &str) -> Result<Vec<Segment>, ParseError> {
        let mut segments = Vec::new();
        let mut byte = 0;
        let mut chars = 0;
        let advance = |from: usize, to: usize| text[from..to].chars().count();

        loop {
            let rest = &text[byte..];
            let trimmed = rest.trim_start();
            let ws = rest.len() - trimmed.len();
            if trimmed.is_empty() {
                break;
            }
            chars += advance(byte, byte + ws);
            byte += ws;

            let (kind, len) = match self.tag_at(trimmed) {
                Some((kind, TagEdge::Open, len)) => (kind, len),
                Some((_, TagEdge::Close, _)) => {
                    return Err(ParseError::new(ParseErrorKind::TrailingGarbage, chars))
                }
                None if looks_like_tag(trimmed) => {
                    return Err(ParseError::new(ParseErrorKind::UnknownTag, chars))
                }
                None => return Err(ParseError::new(ParseErrorKind::TrailingGarbage, chars)),
            };

            let start_chars = chars;
            let payload_start = byte + len;
            // The payload ends at the next protocol tag, which must be our closer.
            let next_tag = text[payload_start..]
                .match_indices('<')
                .find_map(|(i, _)| {
                    self.tag_at(&text[payload_start + i..])
                        .map(|t| (payload_start + i, t))
                });
            let (close_at, close_len) = match next_tag {
                Some((at, (k, TagEdge::Close, l))) if k == kind => (at, l),
                Some((at, _)) => {
                    return Err(ParseError::new(
                        ParseErrorKind::UnclosedTag,
                        start_chars + advance(byte, at),
                    ))
                }
                None => return Err(ParseError::new(ParseErrorKind::UnclosedTag, start_chars)),
            };

            let payload = &text[payload_start..close_at];
            if payload.trim().is_empty() {
                return Err(ParseError::new(ParseErrorKind::EmptyPayload, start_chars));
            }
            let end_byte = close_at + close_len;
            chars += advance(byte, end_byte);
            byte = end_byte;
            segments.push(Segment {
                kind,
                text: payload.to_string(),
                char_span: start_chars..chars,
            });
        }
        Ok(segments)
    }

    /// Parses one Planner generation: `Think* (ToolCall | Answer)`.
    pub fn parse_emission(&self, text: &str) -> Result<Vec<Segment>, ParseError> {
        let segments = self.scan_segments(text)?;
        let mut terminal_seen = false;
        for seg in &segments {
            match seg.kind {
                SegmentKind::Observation => {
                    return Err(ParseError::new(ParseErrorKind::UnknownTag, seg.char_span.start))
                }
                SegmentKind::Think if terminal_seen => {
                    return Err(ParseError::new(
                        ParseErrorKind::TrailingGarbage,
                        seg.char_span.start,
                    ))
                }
                SegmentKind::Think => {}
                SegmentKind::ToolCall | SegmentKind::Answer if terminal_seen => {
                    return Err(ParseError::new(
                        ParseErrorKind::MultipleTerminals,
                        seg.char_span.start,
                    ))
                }
                SegmentKind::ToolCall | SegmentKind::Answer => terminal_seen = true,
            }
        }
        if !terminal_seen {
            return Err(ParseError::new(
                ParseErrorKind::MissingTerminal,
                text.chars().count(),
            ));
        }
        Ok(segments)
    }

    /// Parses a full serialized trajectory and checks its ordering rules.
    pub fn parse_trajectory(&self, text: &str) -> Result<Vec<Segment>, ParseError> {
        let segments = self.scan_segments(text)?;
        check_trajectory_order(&segments)
            .map_err(|(kind, i)| ParseError::new(kind, segments[i].char_span.start))?;
        Ok(segments)
    }

    pub fn render_segment(&self, kind: SegmentKind, text: &str) -> String {
        format!("{}{}{}", self.open(kind), text, self.close(kind))
    }

    pub fn serialize(&self, segments: &[Segment]) -> String {
        segments
            .iter()
            .map(|s| self.render_segment(s.kind, &s.text))
            .collect()
    }
}

/// `<name>` or `</name>` where name is a run of word characters.
fn looks_like_tag(rest: &str) -> bool {
    let Some(body) = rest.strip_prefix('<') else {
        return false;
    };
    let body = body.strip_prefix('/').unwrap_or(body);
    let name_len = body
        .find(|c: char| !(c.is_alphanumeric() || c == '_' || c == '-'))
        .unwrap_or(body.len());
    name_len > 0 && body[name_len..].starts_with('>')
}

/// Ordering rules shared by [`Trajectory::validate`] and trajectory parsing.
/// Returns the offending segment index on failure.
fn check_trajectory_order(segments: &[Segment]) -> Result<(), (ParseErrorKind, usize)> {
    for (i, seg) in segments.iter().enumerate() {
        let prev = i.checked_sub(1).map(|p| segments[p].kind);
        match seg.kind {
            SegmentKind::Answer if i + 1 != segments.len() => {
                return Err((ParseErrorKind::MultipleTerminals, i + 1))
            }
            SegmentKind::Observation
                if !(prev.is_none() || prev == Some(SegmentKind::ToolCall)) =>
            {
                return Err((ParseErrorKind::TrailingGarbage, i))
            }
            _ => {}
        }
        if prev == Some(SegmentKind::ToolCall) && seg.kind != SegmentKind::Observation {
            return Err((ParseErrorKind::UnclosedTag, i));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TrajectoryError {
    #[error("segment {index}: payload contains a protocol tag")]
    TagInPayload { index: usize },
    #[error("segment {index}: empty payload")]
    EmptyPayload { index: usize },
    #[error("segment {index}: ordering violation ({kind:?})")]
    Order { index: usize, kind: ParseErrorKind },
    #[error("trailing tool call has no observation")]
    DanglingToolCall,
    #[error("terminal {terminal:?} inconsistent with segments")]
    TerminalMismatch { terminal: Terminal },
    #[error("rounds_used {rounds} exceeds limit {limit}")]
    TooManyRounds { rounds: usize, limit: usize },
}

/// One rollout: the y_i a group is built from.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub prompt_id: String,
    segments: Vec<Segment>,
    pub terminal: Terminal,
    /// The emission that ended the rollout without being appended: a malformed
    /// generation, or the tool call that would have exceeded the round limit.
    pub rejected_emission: Option<String>,
    /// Toolcaller provenance, one entry per observation.
    pub packets: Vec<ObservationPacket>,
    /// Token logprobs reported by the policy, one entry per emission in order,
    /// the rejected one included (empty when the policy reported none).
    pub emission_logprobs: Vec<Vec<TokenLogprob>>,
}

impl Trajectory {
    pub fn new(prompt_id: impl Into<String>) -> Self {
        Self {
            prompt_id: prompt_id.into(),
            segments: Vec::new(),
            terminal: Terminal::MalformedOutput,
            rejected_emission: None,
            packets: Vec::new(),
            emission_logprobs: Vec::new(),
        }
    }

    /// Builds a trajectory from (kind, text) pairs, assigning canonical spans.
    pub fn from_parts<I, S>(prompt_id: impl Into<String>, parts: I, terminal: Terminal) -> Self
    where
        I: IntoIterator<Item = (SegmentKind, S)>,
        S: Into<String>,
    {
        let mut t = Trajectory::new(prompt_id);
        for (kind, text) in parts {
            t.push(kind, text);
        }
        t.terminal = terminal;
        t
    }

    /// Appends a segment; its span is where it lands in the canonical serialization.
    pub fn push(&mut self, kind: SegmentKind, text: impl Into<String>) {
        let text = text.into();
        let tags = TagSet::default();
        let start = self.segments.last().map_or(0, |s| s.char_span.end);
        let len = tags.open(kind).chars().count()
            + text.chars().count()
            + tags.close(kind).chars().count();
        self.segments.push(Segment {
            kind,
            text,
            char_span: start..start + len,
        });
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn rounds_used(&self) -> usize {
        self.segments
            .iter()
            .filter(|s| s.kind == SegmentKind::ToolCall)
            .count()
    }

    pub fn answer(&self) -> Option<&str> {
        match self.segments.last() {
            Some(s) if s.kind == SegmentKind::Answer => Some(&s.text),
            _ => None,
        }
    }

    pub fn serialized_len(&self) -> usize {
        self.segments.last().map_or(0, |s| s.char_span.end)
    }

    /// Everything the policy generated or was shown, in order: the canonical
    /// serialization followed by the rejected emission, if any.
    pub fn training_text(&self) -> String {
        let mut text = serialize_trajectory(self);
        if let Some(r) = &self.rejected_emission {
            text.push_str(r);
        }
        text
    }

    pub fn validate(&self, max_rounds: usize) -> Result<(), TrajectoryError> {
        let tags = TagSet::default();
        for (index, seg) in self.segments.iter().enumerate() {
            if seg.text.trim().is_empty() {
                return Err(TrajectoryError::EmptyPayload { index });
            }
            if tags.contains_tag(&seg.text) {
                return Err(TrajectoryError::TagInPayload { index });
            }
        }
        check_trajectory_order(&self.segments)
            .map_err(|(kind, index)| TrajectoryError::Order { index, kind })?;
        if self.segments.last().map(|s| s.kind) == Some(SegmentKind::ToolCall) {
            return Err(TrajectoryError::DanglingToolCall);
        }
        let answered = self.answer().is_some();
        if answered != (self.terminal == Terminal::Answered) {
            return Err(TrajectoryError::TerminalMismatch {
                terminal: self.terminal,
            });
        }
        let rounds = self.rounds_used();
        if rounds > max_rounds {
            return Err(TrajectoryError::TooManyRounds {
                rounds,
                limit: max_rounds,
            });
        }
        Ok(())
    }

    pub fn to_dump(&self) -> TrajectoryDump {
        TrajectoryDump {
            prompt_id: self.prompt_id.clone(),
            terminal: self.terminal,
            rounds_used: self.rounds_used(),
            segments: self
                .segments
                .iter()
                .map(|s| DumpSegment {
                    kind: s.kind,
                    text: s.text.clone(),
                })
                .collect(),
            rejected_emission: self.rejected_emission.clone(),
            packets: self.packets.clone(),
            emission_logprobs: if self.emission_logprobs.iter().all(Vec::is_empty) {
                Vec::new()
            } else {
                self.emission_logprobs.clone()
            },
        }
    }

    pub fn from_dump(dump: TrajectoryDump) -> Self {
        let mut t = Trajectory::from_parts(
            dump.prompt_id,
            dump.segments.into_iter().map(|s| (s.kind, s.text)),
            dump.terminal,
        );
        t.rejected_emission = dump.rejected_emission;
        t.packets = dump.packets;
        t.emission_logprobs = dump.emission_logprobs;
        t
    }
}

impl fmt::Display for Trajectory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_trajectory(self))
    }
}

/// Line-oriented JSON form of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDump {
    pub prompt_id: String,
    pub terminal: Terminal,
    pub rounds_used: usize,
    pub segments: Vec<DumpSegment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejected_emission: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub packets: Vec<ObservationPacket>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub emission_logprobs: Vec<Vec<TokenLogprob>>,
}

/// Number of Planner emissions in a segment list: each ends at a terminal.
pub fn emission_count(segments: &[Segment]) -> usize {
    segments.iter().filter(|s| s.kind.is_terminal()).count()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DumpSegment {
    pub kind: SegmentKind,
    pub text: String,
}

pub fn parse_planner_emission(text: &str) -> Result<Vec<Segment>, ParseError> {
    TagSet::default().parse_emission(text)
}

pub fn parse_trajectory(text: &str) -> Result<Vec<Segment>, ParseError> {
    TagSet::default().parse_trajectory(text)
}

/// Canonical tagged text: segments back to back, no separators.
pub fn serialize_trajectory(t: &Trajectory) -> String {
    TagSet::default().serialize(t.segments())
}

/// Spans (tags inclusive) of every Observation segment, in order.
pub fn observation_char_spans(t: &Trajectory) -> Vec<Range<usize>> {
    t.segments()
        .iter()
        .filter(|s| s.kind == SegmentKind::Observation)
        .map(|s| s.char_span.clone())
        .collect()
}
