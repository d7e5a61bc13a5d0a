//! Evaluation sweeps and their reports.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::HarnessConfig;
use super::dataset::QASample;
use crate::metrics::{score_trajectory_with, CemVariant};
use crate::protocol::Terminal;
use crate::rollout::{derive_seed, prompts, BatchItem, RolloutEngine, RunMode};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("report encoding failed: {0}")]
    Encode(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Published full-scale numbers kept next to desk results for comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub dataset: String,
    pub system: String,
    pub em_pct: f64,
    pub cem_pct: f64,
}

const REFERENCE_TABLE: &[(&str, &str, f64, f64)] = &[
    ("bamboogle", "direct-io", 17.6, 26.4),
    ("bamboogle", "direct-io+web-search", 29.6, 42.4),
    ("bamboogle", "single-agent", 36.8, 47.2),
    ("bamboogle", "single-agent+web-search", 51.2, 62.4),
    ("bamboogle", "flat-raw-search", 58.4, 72.0),
    ("bamboogle", "hierarchical-base", 60.0, 71.2),
    ("bamboogle", "hierarchical-instruct", 63.2, 75.2),
    ("hotpotqa", "direct-io", 20.0, 27.2),
    ("hotpotqa", "direct-io+web-search", 32.6, 52.8),
    ("hotpotqa", "single-agent", 23.2, 44.2),
    ("hotpotqa", "single-agent+web-search", 32.4, 59.4),
    ("hotpotqa", "flat-raw-search", 47.2, 64.2),
    ("hotpotqa", "hierarchical-base", 35.0, 55.2),
    ("hotpotqa", "hierarchical-instruct", 37.2, 57.4),
    ("2wikimultihopqa", "direct-io", 22.6, 25.4),
    ("2wikimultihopqa", "direct-io+web-search", 27.2, 40.2),
    ("2wikimultihopqa", "single-agent", 20.8, 34.6),
    ("2wikimultihopqa", "single-agent+web-search", 35.0, 69.4),
    ("2wikimultihopqa", "flat-raw-search", 52.4, 68.0),
    ("2wikimultihopqa", "hierarchical-base", 42.8, 68.0),
    ("2wikimultihopqa", "hierarchical-instruct", 44.6, 70.0),
    ("musique", "direct-io", 4.8, 9.0),
    ("musique", "direct-io+web-search", 14.0, 18.0),
    ("musique", "single-agent", 9.2, 18.8),
    ("musique", "single-agent+web-search", 16.0, 29.4),
    ("musique", "flat-raw-search", 20.8, 28.6),
    ("musique", "hierarchical-base", 15.6, 28.8),
    ("musique", "hierarchical-instruct", 18.4, 29.8),
];

/// Reference rows for `dataset` (all rows when the name is not a known benchmark).
pub fn reference_rows(dataset: &str) -> Vec<ReferenceRow> {
    let key = dataset.to_ascii_lowercase();
    let known = REFERENCE_TABLE.iter().any(|r| r.0 == key);
    REFERENCE_TABLE
        .iter()
        .filter(|r| !known || r.0 == key)
        .map(|&(d, s, em, cem)| ReferenceRow {
            dataset: d.into(),
            system: s.into(),
            em_pct: em,
            cem_pct: cem,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub id: String,
    pub prediction: String,
    pub em: bool,
    pub cem: bool,
    pub f1: f64,
    pub rounds_used: usize,
    /// Absent when the rollout failed in transport.
    pub terminal: Option<Terminal>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub n: usize,
    pub em_pct: f64,
    pub cem_pct: f64,
    pub f1_pct: f64,
}

fn pct(part: f64, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    (1000.0 * part / n as f64).round() / 10.0
}

impl Aggregates {
    /// Percentages to one decimal place.
    pub fn from_rows(rows: &[SampleRow]) -> Self {
        let n = rows.len();
        let count = |f: fn(&SampleRow) -> bool| rows.iter().filter(|r| f(r)).count() as f64;
        Self {
            n,
            em_pct: pct(count(|r| r.em), n),
            cem_pct: pct(count(|r| r.cem), n),
            f1_pct: pct(rows.iter().map(|r| r.f1).sum(), n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub dataset: String,
    pub mode: RunMode,
    pub n: usize,
    pub config_fingerprint: String,
    pub cem_variant: CemVariant,
    pub prompt_version: String,
    pub reference: Vec<ReferenceRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: ReportMeta,
    pub aggregates: Aggregates,
    pub per_sample: Vec<SampleRow>,
}

impl EvalReport {
    pub fn em_pct(&self) -> f64 {
        self.aggregates.em_pct
    }

    pub fn cem_pct(&self) -> f64 {
        self.aggregates.cem_pct
    }

    /// True when the stored aggregates equal a recomputation from the rows.
    pub fn is_consistent(&self) -> bool {
        self.aggregates == Aggregates::from_rows(&self.per_sample) && self.meta.n == self.per_sample.len()
    }

    pub fn write_json(&self, path: &Path) -> Result<(), EvalError> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| EvalError::Encode(e.to_string()))?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| EvalError::Encode(e.to_string()))
    }

    /// One row per sample with the run's dataset and mode repeated.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), EvalError> {
        #[derive(Serialize)]
        struct Flat<'a> {
            dataset: &'a str,
            mode: &'a str,
            id: &'a str,
            prediction: &'a str,
            em: bool,
            cem: bool,
            f1: f64,
            rounds_used: usize,
            terminal: &'a str,
        }
        let mut w = csv::Writer::from_writer(out);
        for r in &self.per_sample {
            w.serialize(Flat {
                dataset: &self.meta.dataset,
                mode: self.meta.mode.as_str(),
                id: &r.id,
                prediction: &r.prediction,
                em: r.em,
                cem: r.cem,
                f1: r.f1,
                rounds_used: r.rounds_used,
                terminal: match r.terminal {
                    Some(Terminal::Answered) => "answered",
                    Some(Terminal::MalformedOutput) => "malformed_output",
                    Some(Terminal::RoundLimitExceeded) => "round_limit_exceeded",
                    None => "transport_error",
                },
            })
            .map_err(|e| EvalError::Encode(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// SHA-256 over the canonical JSON of the effective configuration.
pub fn config_fingerprint(cfg: &HarnessConfig) -> String {
    let json = serde_json::to_vec(cfg).expect("config always serializes");
    hex::encode(Sha256::digest(&json))
}

/// Runs every sample through `engine` and scores the results.
///
/// Rollout seeds derive from `cfg.seed` and the sample id, so a sample's
/// outcome does not depend on its position or on concurrency. Failed
/// rollouts count as wrong.
pub fn evaluate(
    dataset_name: &str,
    samples: &[QASample],
    engine: &RolloutEngine<'_>,
    cfg: &HarnessConfig,
) -> Result<EvalReport, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let items: Vec<BatchItem> = samples
        .iter()
        .map(|s| BatchItem {
            prompt_id: s.id.clone(),
            question: s.question.clone(),
            seed: derive_seed(cfg.seed, &s.id),
        })
        .collect();
    let results = engine.run_batch(&items, cfg.concurrency);

    let per_sample: Vec<SampleRow> = samples
        .iter()
        .zip(results)
        .map(|(s, res)| match res {
            Ok(t) => {
                let score = score_trajectory_with(&t, &s.golds, cfg.cem_variant);
                SampleRow {
                    id: s.id.clone(),
                    prediction: t.answer().unwrap_or_default().to_string(),
                    em: score.em,
                    cem: score.cem,
                    f1: score.f1,
                    rounds_used: t.rounds_used(),
                    terminal: Some(t.terminal),
                    error: None,
                }
            }
            Err(e) => {
                log::warn!("{}: rollout failed: {e}", s.id);
                SampleRow {
                    id: s.id.clone(),
                    prediction: String::new(),
                    em: false,
                    cem: false,
                    f1: 0.0,
                    rounds_used: 0,
                    terminal: None,
                    error: Some(e.to_string()),
                }
            }
        })
        .collect();

    let effective = HarnessConfig {
        rollout: engine.config,
        ..cfg.clone()
    };
    Ok(EvalReport {
        meta: ReportMeta {
            dataset: dataset_name.to_string(),
            mode: engine.config.mode,
            n: per_sample.len(),
            config_fingerprint: config_fingerprint(&effective),
            cem_variant: cfg.cem_variant,
            prompt_version: prompts::VERSION.to_string(),
            reference: reference_rows(dataset_name),
        },
        aggregates: Aggregates::from_rows(&per_sample),
        per_sample,
    })
}
