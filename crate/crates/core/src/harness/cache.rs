use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{io_err, HarnessError};
use crate::model_client::{CallContext, ChatRequest, Completion, ModelError, VisionModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub prompt_hash: String,
    pub image_digests: Vec<String>,
    pub raw_response: String,
    pub ts: u64,
}

fn sha_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

/// Content address of a request: model, prompt text, image pixels and decoding.
pub fn cache_key(model_name: &str, req: &ChatRequest) -> String {
    let digests = req.image_digests().join(",");
    let decoding = format!("{}|{}", req.max_tokens, req.temperature);
    sha_hex(&[model_name.as_bytes(), req.prompt.as_bytes(), digests.as_bytes(), decoding.as_bytes()])
}

/// Append-only JSON Lines store of raw responses. Unreadable lines are
/// skipped on load; the last entry for a key wins.
#[derive(Debug)]
pub struct ResponseCache {
    path: PathBuf,
    entries: RwLock<HashMap<String, String>>,
    writer: Mutex<File>,
    skipped: usize,
}

impl ResponseCache {
    pub const FILE_NAME: &'static str = "responses.jsonl";

    /// Opens `<dir>/responses.jsonl`, creating it if needed.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join(Self::FILE_NAME);
        let mut entries = HashMap::new();
        let mut skipped = 0;
        if path.exists() {
            let file = File::open(&path).map_err(io_err(&path))?;
            for line in BufReader::new(file).lines() {
                let line = line.map_err(io_err(&path))?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheEntry>(&line) {
                    Ok(e) => {
                        entries.insert(e.key, e.raw_response);
                    }
                    Err(_) => skipped += 1,
                }
            }
        }
        if skipped > 0 {
            log::warn!("{}: skipped {skipped} unreadable cache line(s)", path.display());
        }
        let writer = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        Ok(Self {
            path,
            entries: RwLock::new(entries),
            writer: Mutex::new(writer),
            skipped,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Lines dropped while loading.
    pub fn skipped_lines(&self) -> usize {
        self.skipped
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.entries.read().expect("cache lock").get(key).cloned()
    }

    pub fn insert(&self, key: &str, req: &ChatRequest, raw_response: &str) -> Result<(), HarnessError> {
        let entry = CacheEntry {
            key: key.to_string(),
            prompt_hash: sha_hex(&[req.prompt.as_bytes()]),
            image_digests: req.image_digests(),
            raw_response: raw_response.to_string(),
            ts: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        };
        let mut line = serde_json::to_string(&entry).expect("entry is plain data");
        line.push('\n');
        {
            let mut w = self.writer.lock().expect("cache writer lock");
            w.write_all(line.as_bytes()).map_err(io_err(&self.path))?;
            w.flush().map_err(io_err(&self.path))?;
        }
        self.entries
            .write()
            .expect("cache lock")
            .insert(entry.key, entry.raw_response);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub new_calls: usize,
    pub cache_hits: usize,
}

/// Serves repeated requests from a [`ResponseCache`] and forwards the rest.
pub struct CachedModel<'a> {
    inner: &'a dyn VisionModel,
    cache: &'a ResponseCache,
    new_calls: AtomicUsize,
    cache_hits: AtomicUsize,
}

impl<'a> CachedModel<'a> {
    pub fn new(inner: &'a dyn VisionModel, cache: &'a ResponseCache) -> Self {
        Self {
            inner,
            cache,
            new_calls: AtomicUsize::new(0),
            cache_hits: AtomicUsize::new(0),
        }
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            new_calls: self.new_calls.load(Ordering::SeqCst),
            cache_hits: self.cache_hits.load(Ordering::SeqCst),
        }
    }
}

impl VisionModel for CachedModel<'_> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn complete(&self, req: &ChatRequest, ctx: &CallContext) -> Result<Completion, ModelError> {
        let key = cache_key(self.inner.name(), req);
        if let Some(text) = self.cache.get(&key) {
            self.cache_hits.fetch_add(1, Ordering::SeqCst);
            let mut c = Completion::text(text);
            c.attempts = 0;
            return Ok(c);
        }
        self.new_calls.fetch_add(1, Ordering::SeqCst);
        let completion = self.inner.complete(req, ctx)?;
        if let Err(e) = self.cache.insert(&key, req, &completion.text) {
            log::warn!("could not persist cache entry: {e}");
        }
        Ok(completion)
    }
}
