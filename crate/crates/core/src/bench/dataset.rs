//! JSON-lines QA datasets.
//!
//! Accepted record shapes: `{"id"?, "question", "answer"}`, with the gold in
//! `answer`, `answers` or `golden_answers`, each either a string or a list of
//! aliases. Ids may be strings or integers; missing ids become
//! `<source>-<record index>`.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::metrics::GoldAnswerSet;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceDataset {
    HotpotQA,
    TwoWikiMultiHopQA,
    MuSiQue,
    Bamboogle,
    Custom,
}

impl SourceDataset {
    pub fn as_str(&self) -> &'static str {
        match self {
            SourceDataset::HotpotQA => "hotpotqa",
            SourceDataset::TwoWikiMultiHopQA => "2wikimultihopqa",
            SourceDataset::MuSiQue => "musique",
            SourceDataset::Bamboogle => "bamboogle",
            SourceDataset::Custom => "custom",
        }
    }

    /// Guesses the source from a file name, falling back to `Custom`.
    pub fn from_path(path: &Path) -> Self {
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().to_lowercase())
            .unwrap_or_default();
        let compact: String = name.chars().filter(|c| c.is_alphanumeric()).collect();
        if compact.contains("2wiki") || compact.contains("twowiki") {
            SourceDataset::TwoWikiMultiHopQA
        } else if compact.contains("hotpot") {
            SourceDataset::HotpotQA
        } else if compact.contains("musique") {
            SourceDataset::MuSiQue
        } else if compact.contains("bamboogle") {
            SourceDataset::Bamboogle
        } else {
            SourceDataset::Custom
        }
    }
}

impl fmt::Display for SourceDataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SourceDataset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "hotpotqa" => Ok(SourceDataset::HotpotQA),
            "2wikimultihopqa" | "2wiki" | "twowikimultihopqa" => Ok(SourceDataset::TwoWikiMultiHopQA),
            "musique" => Ok(SourceDataset::MuSiQue),
            "bamboogle" => Ok(SourceDataset::Bamboogle),
            "custom" => Ok(SourceDataset::Custom),
            other => Err(format!("unknown dataset '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QASample {
    pub id: String,
    pub question: String,
    pub golds: GoldAnswerSet,
    pub source_dataset: SourceDataset,
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("dataset has no records")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn gold_field(record: &serde_json::Map<String, Value>) -> Result<Vec<String>, String> {
    for key in ["answer", "answers", "golden_answers"] {
        let Some(v) = record.get(key) else { continue };
        return match v {
            Value::String(s) => Ok(vec![s.clone()]),
            Value::Array(items) => items
                .iter()
                .map(|i| match i {
                    Value::String(s) => Ok(s.clone()),
                    Value::Number(n) => Ok(n.to_string()),
                    _ => Err(format!("'{key}' must hold strings")),
                })
                .collect(),
            Value::Number(n) => Ok(vec![n.to_string()]),
            _ => Err(format!("'{key}' must be a string or a list of strings")),
        };
    }
    Err("missing 'answer', 'answers' or 'golden_answers'".into())
}

fn parse_record(line: &str, index: usize, source: &SourceDataset) -> Result<QASample, String> {
    let value: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let Value::Object(record) = value else {
        return Err("record is not a JSON object".into());
    };
    let question = match record.get("question") {
        Some(Value::String(q)) if !q.trim().is_empty() => q.clone(),
        Some(Value::String(_)) => return Err("'question' is empty".into()),
        _ => return Err("missing string field 'question'".into()),
    };
    let golds = GoldAnswerSet::new(gold_field(&record)?).map_err(|e| e.to_string())?;
    let id = match record.get("id").or_else(|| record.get("_id")) {
        Some(Value::String(s)) if !s.is_empty() => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        None | Some(Value::Null) => format!("{source}-{index}"),
        Some(_) => return Err("'id' must be a string or an integer".into()),
    };
    Ok(QASample {
        id,
        question,
        golds,
        source_dataset: source.clone(),
    })
}

/// Parses a whole dataset; any bad line rejects the load.
pub fn parse_dataset(text: &str, source: SourceDataset) -> Result<Vec<QASample>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let sample = parse_record(line, out.len(), &source)
            .map_err(|message| DatasetError::Format { line: i + 1, message })?;
        out.push(sample);
    }
    if out.is_empty() {
        return Err(DatasetError::Empty);
    }
    Ok(out)
}

/// Loads a JSON-lines file. Without a hint the source is guessed from the file name.
pub fn load_dataset(path: &Path, format_hint: Option<SourceDataset>) -> Result<Vec<QASample>, DatasetError> {
    let source = format_hint.unwrap_or_else(|| SourceDataset::from_path(path));
    parse_dataset(&fs::read_to_string(path)?, source)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_record() {
        let s = parse_dataset(r#"{"question":"q","answer":"ulm"}"#, SourceDataset::Custom).unwrap();
        assert_eq!(s[0].golds.aliases(), ["ulm"]);
        assert_eq!(s[0].id, "custom-0");
    }

    #[test]
    fn gold_that_normalizes_away_is_rejected() {
        let err = parse_dataset(r#"{"question":"q","answer":"a"}"#, SourceDataset::Custom).unwrap_err();
        assert!(matches!(err, DatasetError::Format { line: 1, .. }));
    }

    #[test]
    fn alias_lists_and_ids() {
        let text = concat!(
            r#"{"id":"x1","question":"q","golden_answers":["x","y"]}"#,
            "\n\n",
            r#"{"id":17,"question":"q2","answers":["z"]}"#,
            "\n",
            r#"{"question":"q3","answer":["w"]}"#,
        );
        let s = parse_dataset(text, SourceDataset::Bamboogle).unwrap();
        assert_eq!(s[0].golds.aliases().len(), 2);
        assert_eq!(s[1].id, "17");
        assert_eq!(s[2].id, "bamboogle-2");
    }

    #[test]
    fn bad_line_is_named() {
        let mut lines: Vec<String> = (0..10)
            .map(|i| format!(r#"{{"question":"q{i}","answer":"x"}}"#))
            .collect();
        lines[6] = r#"{"question":"q6""#.into();
        let err = parse_dataset(&lines.join("\n"), SourceDataset::Custom).unwrap_err();
        assert!(matches!(err, DatasetError::Format { line: 7, .. }));
        assert!(err.to_string().starts_with("line 7"));
    }

    #[test]
    fn missing_gold_and_empty_question_are_errors() {
        assert!(parse_dataset(r#"{"question":"q"}"#, SourceDataset::Custom).is_err());
        assert!(parse_dataset(r#"{"question":" ","answer":"x"}"#, SourceDataset::Custom).is_err());
        assert!(parse_dataset(r#"{"question":"q","answer":[]}"#, SourceDataset::Custom).is_err());
    }

    #[test]
    fn source_from_file_name() {
        assert_eq!(SourceDataset::from_path(Path::new("data/2wiki_dev.jsonl")), SourceDataset::TwoWikiMultiHopQA);
        assert_eq!(SourceDataset::from_path(Path::new("hotpot.jsonl")), SourceDataset::HotpotQA);
        assert_eq!(SourceDataset::from_path(Path::new("mini.jsonl")), SourceDataset::Custom);
    }
}
