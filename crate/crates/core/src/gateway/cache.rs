use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, BackendError, ChatRequest, ChatResponse};

#[derive(Serialize)]
struct KeyMaterial<'a> {
    model_tag: &'a str,
    system: Option<&'a str>,
    user: &'a str,
    max_output_tokens: usize,
    temperature: f64,
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    key: String,
    response: ChatResponse,
}

/// Response cache persisted as JSON lines of `{key, response}`.
pub struct ResponseCache {
    entries: Mutex<HashMap<String, ChatResponse>>,
    file: Mutex<Option<File>>,
    path: Option<PathBuf>,
    skipped_lines: usize,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        ResponseCache {
            entries: Mutex::new(HashMap::new()),
            file: Mutex::new(None),
            path: None,
            skipped_lines: 0,
        }
    }

    /// Opens (or creates) a cache file. Corrupt lines are skipped.
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let mut entries = HashMap::new();
        let mut skipped_lines = 0;
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheLine>(&line) {
                    Ok(rec) => {
                        entries.insert(rec.key, rec.response);
                    }
                    Err(e) => {
                        skipped_lines += 1;
                        tracing::warn!(line = i + 1, error = %e, path = %path.display(), "skipping corrupt cache line");
                    }
                }
            }
        }
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(ResponseCache {
            entries: Mutex::new(entries),
            file: Mutex::new(Some(file)),
            path: Some(path.to_path_buf()),
            skipped_lines,
        })
    }

    pub fn key(req: &ChatRequest) -> String {
        let material = KeyMaterial {
            model_tag: &req.model_tag,
            system: req.system.as_deref(),
            user: &req.user,
            max_output_tokens: req.max_output_tokens,
            temperature: req.temperature,
        };
        let bytes = serde_json::to_vec(&material).expect("key material serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn skipped_lines(&self) -> usize {
        self.skipped_lines
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, req: &ChatRequest) -> Option<ChatResponse> {
        self.entries.lock().unwrap().get(&Self::key(req)).cloned()
    }

    /// Serves a hit from the cache, otherwise calls `backend` and appends
    /// the response.
    pub fn lookup_or_call(&self, backend: &dyn Backend, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let key = Self::key(req);
        if let Some(hit) = self.entries.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let resp = backend.complete(req)?;
        self.insert(key, resp.clone())
            .map_err(|e| BackendError::Other(format!("cache write failed: {e}")))?;
        Ok(resp)
    }

    fn insert(&self, key: String, response: ChatResponse) -> std::io::Result<()> {
        let mut entries = self.entries.lock().unwrap();
        if entries.contains_key(&key) {
            return Ok(());
        }
        if let Some(file) = self.file.lock().unwrap().as_mut() {
            let mut line = serde_json::to_string(&CacheLine {
                key: key.clone(),
                response: response.clone(),
            })
            .expect("cache line serializes");
            line.push('\n');
            file.write_all(line.as_bytes())?;
            file.flush()?;
        }
        entries.insert(key, response);
        Ok(())
    }
}

/// Convenience free function mirroring [`ResponseCache::lookup_or_call`].
pub fn cache_lookup_or_call(
    backend: &dyn Backend,
    req: &ChatRequest,
    cache: &ResponseCache,
) -> Result<ChatResponse, BackendError> {
    cache.lookup_or_call(backend, req)
}

/// A backend that consults a [`ResponseCache`] before its inner backend.
pub struct CachingBackend {
    inner: Arc<dyn Backend>,
    cache: Arc<ResponseCache>,
}

impl CachingBackend {
    pub fn new(inner: Arc<dyn Backend>, cache: Arc<ResponseCache>) -> Self {
        CachingBackend { inner, cache }
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }
}

impl Backend for CachingBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        cache_lookup_or_call(self.inner.as_ref(), req, &self.cache)
    }

    fn context_limit(&self) -> usize {
        self.inner.context_limit()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ScriptRule, ScriptedBackend};

    fn scripted() -> Arc<ScriptedBackend> {
        Arc::new(ScriptedBackend::new(vec![ScriptRule::Default { reply: "r".into() }]))
    }

    #[test]
    fn second_identical_request_is_a_hit() {
        let b = scripted();
        let cache = ResponseCache::in_memory();
        let req = ChatRequest::new("m", "q", 8);
        let first = cache.lookup_or_call(b.as_ref(), &req).unwrap();
        let second = cache.lookup_or_call(b.as_ref(), &req).unwrap();
        assert_eq!(first, second);
        assert_eq!(b.invocations(), 1);
    }

    #[test]
    fn temperature_is_part_of_the_key() {
        let b = scripted();
        let cache = ResponseCache::in_memory();
        let mut req = ChatRequest::new("m", "q", 8);
        cache.lookup_or_call(b.as_ref(), &req).unwrap();
        req.temperature = 0.7;
        cache.lookup_or_call(b.as_ref(), &req).unwrap();
        assert_eq!(b.invocations(), 2);
    }

    #[test]
    fn persists_and_skips_corrupt_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let req = ChatRequest::new("m", "q", 8);
        {
            let cache = ResponseCache::open(&path).unwrap();
            cache.lookup_or_call(scripted().as_ref(), &req).unwrap();
        }
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        writeln!(f, "{{not json").unwrap();
        drop(f);

        let cache = ResponseCache::open(&path).unwrap();
        assert_eq!(cache.skipped_lines(), 1);
        assert_eq!(cache.len(), 1);
        let b = scripted();
        cache.lookup_or_call(b.as_ref(), &req).unwrap();
        assert_eq!(b.invocations(), 0);
    }
}
