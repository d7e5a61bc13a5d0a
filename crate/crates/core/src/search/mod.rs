//! Search backends behind the Toolcaller.

mod cache;
mod fixture;
mod http;

pub use cache::{CacheMode, CachedSearch};
pub use fixture::{tokenize_terms, CorpusDocument, CorpusError, FixtureCorpus};
pub use http::{HitMapping, HttpSearchClient};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SearchHit {
    pub title: String,
    pub snippet: String,
    /// URL or corpus doc id.
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SearchError {
    #[error("search transport failure: {0}")]
    Transport(String),
    #[error("no recorded response for query {0:?} in replay mode")]
    CacheMiss(String),
    #[error("network access is disabled")]
    Offline,
}

impl SearchError {
    /// Whether retrying the same request could succeed.
    pub fn is_transient(&self) -> bool {
        matches!(self, SearchError::Transport(_))
    }
}

/// Returns at most `top_k` hits in the backend's relevance order.
pub trait SearchClient: Send + Sync {
    fn search(&self, query: &str, top_k: usize) -> Result<Vec<SearchHit>, SearchError>;
}

impl<S: SearchClient + ?Sized> SearchClient for &S {
    fn search(&self, query: &str, top_k: usize) -> Result<Vec<SearchHit>, SearchError> {
        (**self).search(query, top_k)
    }
}

impl<S: SearchClient + ?Sized> SearchClient for std::sync::Arc<S> {
    fn search(&self, query: &str, top_k: usize) -> Result<Vec<SearchHit>, SearchError> {
        (**self).search(query, top_k)
    }
}

impl<S: SearchClient + ?Sized> SearchClient for Box<S> {
    fn search(&self, query: &str, top_k: usize) -> Result<Vec<SearchHit>, SearchError> {
        (**self).search(query, top_k)
    }
}

/// Stand-in for a live backend when network use is forbidden. Every call fails.
#[derive(Debug, Default)]
pub struct NoNetworkSearch {
    calls: std::sync::atomic::AtomicUsize,
}

impl NoNetworkSearch {
    pub fn calls(&self) -> usize {
        self.calls.load(std::sync::atomic::Ordering::SeqCst)
    }
}

impl SearchClient for NoNetworkSearch {
    fn search(&self, _query: &str, _top_k: usize) -> Result<Vec<SearchHit>, SearchError> {
        self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        Err(SearchError::Offline)
    }
}
