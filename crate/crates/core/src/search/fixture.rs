//! Deterministic lexical retriever over a local document set.
//!
//! Score of document `d` for query `q`:
//!
//! ```text
//! score(q, d) = Σ_{t ∈ distinct(q) ∩ d} (1 + ln tf(t, d)) · ln(1 + N / df(t))
//! ```
//!
//! Terms come from title and body. Ties go to the smaller doc id.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{SearchClient, SearchError, SearchHit};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusDocument {
    pub doc_id: String,
    pub title: String,
    pub body: String,
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("corpus is empty")]
    Empty,
    #[error("duplicate doc id {0:?}")]
    DuplicateId(String),
    #[error("document {0:?} has neither title nor body")]
    BlankDocument(String),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Lowercased alphanumeric runs; every other character separates terms.
pub fn tokenize_terms(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone)]
struct Posting {
    doc: usize,
    tf: u32,
}

#[derive(Debug, Clone)]
pub struct FixtureCorpus {
    documents: Vec<CorpusDocument>,
    index: HashMap<String, Vec<Posting>>,
}

impl FixtureCorpus {
    pub fn new(documents: Vec<CorpusDocument>) -> Result<Self, CorpusError> {
        if documents.is_empty() {
            return Err(CorpusError::Empty);
        }
        let mut seen = HashSet::new();
        for d in &documents {
            if !seen.insert(d.doc_id.as_str()) {
                return Err(CorpusError::DuplicateId(d.doc_id.clone()));
            }
            if d.title.trim().is_empty() && d.body.trim().is_empty() {
                return Err(CorpusError::BlankDocument(d.doc_id.clone()));
            }
        }

        let mut index: HashMap<String, Vec<Posting>> = HashMap::new();
        for (i, d) in documents.iter().enumerate() {
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for term in tokenize_terms(&d.title)
                .into_iter()
                .chain(tokenize_terms(&d.body))
            {
                *tf.entry(term).or_default() += 1;
            }
            for (term, tf) in tf {
                index.entry(term).or_default().push(Posting { doc: i, tf });
            }
        }
        Ok(Self { documents, index })
    }

    /// Reads JSON lines of `{doc_id, title, body}`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path)?;
        let mut docs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let doc: CorpusDocument =
                serde_json::from_str(line).map_err(|e| CorpusError::Format {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            docs.push(doc);
        }
        Self::new(docs)
    }

    pub fn documents(&self) -> &[CorpusDocument] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    fn idf(&self, term: &str) -> f64 {
        match self.index.get(term) {
            Some(p) => (1.0 + self.documents.len() as f64 / p.len() as f64).ln(),
            None => 0.0,
        }
    }

    fn distinct_query_terms(query: &str) -> Vec<String> {
        let mut seen = HashSet::new();
        tokenize_terms(query)
            .into_iter()
            .filter(|t| seen.insert(t.clone()))
            .collect()
    }

    /// Scores of every document with positive score, best first.
    pub fn rank(&self, query: &str) -> Vec<(usize, f64)> {
        let mut scores: HashMap<usize, f64> = HashMap::new();
        for term in Self::distinct_query_terms(query) {
            let Some(postings) = self.index.get(&term) else {
                continue;
            };
            let idf = self.idf(&term);
            for p in postings {
                *scores.entry(p.doc).or_default() += (1.0 + f64::from(p.tf).ln()) * idf;
            }
        }
        let mut ranked: Vec<(usize, f64)> = scores.into_iter().filter(|(_, s)| *s > 0.0).collect();
        ranked.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.documents[a.0].doc_id.cmp(&self.documents[b.0].doc_id))
        });
        ranked
    }

    /// The body sentence carrying the most query-term weight; the first
    /// sentence when none match, the title when the body is blank.
    fn snippet(&self, doc: &CorpusDocument, query_terms: &[String]) -> String {
        let sentences = split_sentences(&doc.body);
        if sentences.is_empty() {
            return doc.title.trim().to_string();
        }
        let mut best = (0usize, 0.0f64);
        for (i, s) in sentences.iter().enumerate() {
            let terms: HashSet<String> = tokenize_terms(s).into_iter().collect();
            let weight: f64 = query_terms
                .iter()
                .filter(|t| terms.contains(*t))
                .map(|t| self.idf(t))
                .sum();
            if weight > best.1 {
                best = (i, weight);
            }
        }
        sentences[best.0].to_string()
    }

    pub fn search_hits(&self, query: &str, top_k: usize) -> Vec<SearchHit> {
        let terms = Self::distinct_query_terms(query);
        self.rank(query)
            .into_iter()
            .take(top_k)
            .map(|(i, _)| {
                let doc = &self.documents[i];
                SearchHit {
                    title: doc.title.clone(),
                    snippet: self.snippet(doc, &terms),
                    source: doc.doc_id.clone(),
                }
            })
            .collect()
    }
}

fn split_sentences(body: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut iter = body.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        if matches!(c, '.' | '!' | '?') {
            let at_break = iter.peek().is_none_or(|(_, n)| n.is_whitespace());
            if at_break {
                let end = i + c.len_utf8();
                out.push(body[start..end].trim());
                start = end;
            }
        }
    }
    out.push(body[start..].trim());
    out.retain(|s| !s.is_empty());
    out
}

impl SearchClient for FixtureCorpus {
    fn search(&self, query: &str, top_k: usize) -> Result<Vec<SearchHit>, SearchError> {
        Ok(self.search_hits(query, top_k))
    }
}
