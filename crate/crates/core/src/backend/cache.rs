//! Content-addressed on-disk response cache.
//!
//! Keys are SHA-256 digests over the canonical JSON serialization of the
//! request's identity fields, so any field change yields a different key.
//! Entries live one file per key under a two-level hex-prefix fan-out
//! (`ab/cd/abcd....json`) and embed the full request preimage alongside the
//! response for audit. Writes go through a temp file plus rename, so
//! concurrent readers never observe a partial entry; corrupt entries are
//! treated as misses and rewritten.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, BackendError, CompletionRequest, CompletionResponse};

/// 256-bit digest identifying one completion request.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey([u8; 32]);

impl CacheKey {
    pub fn of(request: &CompletionRequest) -> Self {
        // CompletionRequest serializes with a fixed field order, which makes
        // the JSON form canonical for hashing.
        let canonical =
            serde_json::to_vec(request).expect("CompletionRequest serialization cannot fail");
        let digest = Sha256::digest(&canonical);
        CacheKey(digest.into())
    }

    pub fn hex(&self) -> String {
        hex::encode(self.0)
    }
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    digest: String,
    request: CompletionRequest,
    response: CompletionResponse,
}

/// Filesystem-backed response store.
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    fn entry_path(&self, key: &CacheKey) -> PathBuf {
        let hex = key.hex();
        self.dir
            .join(&hex[0..2])
            .join(&hex[2..4])
            .join(format!("{hex}.json"))
    }

    /// Look up a stored response. Corrupt entries are logged and treated as
    /// misses.
    pub fn get(&self, key: &CacheKey) -> Option<CompletionResponse> {
        let path = self.entry_path(key);
        let content = fs::read_to_string(&path).ok()?;
        match serde_json::from_str::<CacheEntry>(&content) {
            Ok(entry) if entry.digest == key.hex() => Some(entry.response),
            Ok(_) => {
                log::warn!("cache entry {path:?} digest mismatch; treating as miss");
                None
            }
            Err(err) => {
                log::warn!("corrupt cache entry {path:?}: {err}; treating as miss");
                None
            }
        }
    }

    /// Store a response atomically (temp file + rename).
    pub fn put(
        &self,
        key: &CacheKey,
        request: &CompletionRequest,
        response: &CompletionResponse,
    ) -> std::io::Result<()> {
        let path = self.entry_path(key);
        let parent = path.parent().expect("entry path has parent");
        fs::create_dir_all(parent)?;
        let entry = CacheEntry {
            digest: key.hex(),
            request: request.clone(),
            response: CompletionResponse {
                cached: false,
                ..response.clone()
            },
        };
        let body = serde_json::to_vec_pretty(&entry)?;
        let tmp = parent.join(format!(".tmp-{:016x}", rand::thread_rng().gen::<u64>()));
        fs::write(&tmp, &body)?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }
}

/// Backend wrapper that serves repeated requests from the cache. Hits are
/// flagged `cached = true` and make no provider call.
pub struct CachedBackend<B> {
    inner: B,
    cache: ResponseCache,
}

impl<B: Backend> CachedBackend<B> {
    pub fn new(inner: B, cache_dir: impl AsRef<Path>) -> std::io::Result<Self> {
        Ok(Self {
            inner,
            cache: ResponseCache::new(cache_dir.as_ref())?,
        })
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: Backend> Backend for CachedBackend<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let key = CacheKey::of(request);
        if let Some(mut response) = self.cache.get(&key) {
            response.cached = true;
            return Ok(response);
        }
        let response = self.inner.complete(request)?;
        if let Err(err) = self.cache.put(&key, request, &response) {
            log::warn!("failed to write cache entry {}: {err}", key.hex());
        }
        Ok(response)
    }

    fn id(&self) -> String {
        self.inner.id()
    }
}
