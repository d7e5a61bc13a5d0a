//! Memoizing wrapper with an optional content-addressed on-disk store.
//!
//! The store holds one JSON file per `(normalized query, top_k)` key, named by
//! the SHA-256 of the key. A store recorded during a live run can be replayed
//! later with no network at all.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{SearchClient, SearchError, SearchHit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CacheMode {
    /// Serve from cache, fall through to the inner client on a miss and record.
    #[default]
    ReadWrite,
    /// Serve from cache only; a miss is an error and the inner client is never called.
    Replay,
}

#[derive(Debug, Serialize, Deserialize)]
struct StoredResponse {
    query: String,
    top_k: usize,
    hits: Vec<SearchHit>,
}

type Key = (String, usize);

pub struct CachedSearch<S> {
    inner: S,
    mode: CacheMode,
    store: Option<PathBuf>,
    memory: RwLock<HashMap<Key, Vec<SearchHit>>>,
    disk_writes: Mutex<()>,
    inner_calls: AtomicUsize,
}

pub(crate) fn normalize_query(query: &str) -> String {
    query
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

impl<S: SearchClient> CachedSearch<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            mode: CacheMode::ReadWrite,
            store: None,
            memory: RwLock::new(HashMap::new()),
            disk_writes: Mutex::new(()),
            inner_calls: AtomicUsize::new(0),
        }
    }

    pub fn with_store(mut self, dir: impl Into<PathBuf>) -> Self {
        self.store = Some(dir.into());
        self
    }

    pub fn with_mode(mut self, mode: CacheMode) -> Self {
        self.mode = mode;
        self
    }

    /// Number of calls forwarded to the wrapped client.
    pub fn inner_calls(&self) -> usize {
        self.inner_calls.load(Ordering::SeqCst)
    }

    pub fn inner(&self) -> &S {
        &self.inner
    }

    fn entry_path(dir: &Path, key: &Key) -> PathBuf {
        let mut h = Sha256::new();
        h.update(key.0.as_bytes());
        h.update([0x1f]);
        h.update(key.1.to_string().as_bytes());
        dir.join(format!("{}.json", hex::encode(h.finalize())))
    }

    fn read_disk(&self, key: &Key) -> Option<Vec<SearchHit>> {
        let path = Self::entry_path(self.store.as_ref()?, key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return None,
            Err(e) => {
                log::warn!("search cache: cannot read {}: {e}; bypassing", path.display());
                return None;
            }
        };
        match serde_json::from_slice::<StoredResponse>(&bytes) {
            Ok(r) if r.query == key.0 && r.top_k == key.1 && r.hits.len() <= r.top_k => Some(r.hits),
            Ok(_) => {
                log::warn!("search cache: {} does not match its key; bypassing", path.display());
                None
            }
            Err(e) => {
                log::warn!("search cache: corrupt entry {}: {e}; bypassing", path.display());
                None
            }
        }
    }

    fn write_disk(&self, key: &Key, hits: &[SearchHit]) {
        let Some(dir) = self.store.as_ref() else {
            return;
        };
        let _guard = self.disk_writes.lock().unwrap_or_else(|p| p.into_inner());
        let path = Self::entry_path(dir, key);
        let record = StoredResponse {
            query: key.0.clone(),
            top_k: key.1,
            hits: hits.to_vec(),
        };
        let result = fs::create_dir_all(dir).and_then(|_| {
            let tmp = path.with_extension("json.tmp");
            fs::write(&tmp, serde_json::to_vec_pretty(&record).expect("hits serialize"))?;
            fs::rename(&tmp, &path)
        });
        if let Err(e) = result {
            log::warn!("search cache: cannot persist {}: {e}", path.display());
        }
    }
}

impl<S: SearchClient> SearchClient for CachedSearch<S> {
    fn search(&self, query: &str, top_k: usize) -> Result<Vec<SearchHit>, SearchError> {
        let key = (normalize_query(query), top_k);
        if let Some(hits) = self
            .memory
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .get(&key)
        {
            return Ok(hits.clone());
        }
        if let Some(hits) = self.read_disk(&key) {
            self.memory
                .write()
                .unwrap_or_else(|p| p.into_inner())
                .insert(key, hits.clone());
            return Ok(hits);
        }
        if self.mode == CacheMode::Replay {
            return Err(SearchError::CacheMiss(query.to_string()));
        }
        self.inner_calls.fetch_add(1, Ordering::SeqCst);
        let hits = self.inner.search(query, top_k)?;
        self.write_disk(&key, &hits);
        self.memory
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .insert(key, hits.clone());
        Ok(hits)
    }
}
