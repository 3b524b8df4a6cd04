use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, CompletionRequest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedResponse {
    pub request_digest: String,
    pub response_text: String,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
    pub backend_id: String,
    pub model_name: String,
    pub temperature: f64,
    pub completion_index: u32,
}

/// Content-addressed response store, optionally persisted as append-only
/// JSONL. Unreadable lines are skipped on load; later entries for the same
/// digest win.
pub struct ResponseCache {
    entries: RwLock<HashMap<String, CachedResponse>>,
    file: Option<Mutex<File>>,
    path: Option<PathBuf>,
    skipped_lines: usize,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        ResponseCache {
            entries: RwLock::new(HashMap::new()),
            file: None,
            path: None,
            skipped_lines: 0,
        }
    }

    pub fn open(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let mut entries = HashMap::new();
        let mut skipped = 0;
        if path.exists() {
            for line in BufReader::new(File::open(path)?).lines() {
                let line = match line {
                    Ok(l) => l,
                    Err(_) => {
                        skipped += 1;
                        continue;
                    }
                };
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CachedResponse>(&line) {
                    Ok(e) if !e.response_text.is_empty() => {
                        entries.insert(e.request_digest.clone(), e);
                    }
                    _ => {
                        skipped += 1;
                        log::warn!("skipping unreadable cache line in {}", path.display());
                    }
                }
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        // A torn final write must not glue onto the next record.
        if std::fs::metadata(path)?.len() > 0 && !ends_with_newline(path)? {
            file.write_all(b"\n")?;
        }
        Ok(ResponseCache {
            entries: RwLock::new(entries),
            file: Some(Mutex::new(file)),
            path: Some(path.to_path_buf()),
            skipped_lines: skipped,
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn skipped_lines(&self) -> usize {
        self.skipped_lines
    }

    pub fn get(&self, digest: &str) -> Option<CachedResponse> {
        self.entries.read().get(digest).cloned()
    }

    pub fn insert(&self, entry: CachedResponse) -> std::io::Result<()> {
        if let Some(file) = &self.file {
            let mut line = serde_json::to_string(&entry).map_err(std::io::Error::from)?;
            line.push('\n');
            let mut f = file.lock();
            f.write_all(line.as_bytes())?;
            f.flush()?;
        }
        self.entries.write().insert(entry.request_digest.clone(), entry);
        Ok(())
    }
}

fn ends_with_newline(path: &Path) -> std::io::Result<bool> {
    use std::io::{Read, Seek, SeekFrom};
    let mut f = File::open(path)?;
    f.seek(SeekFrom::End(-1))?;
    let mut b = [0u8; 1];
    f.read_exact(&mut b)?;
    Ok(b[0] == b'\n')
}

/// Serves repeated requests from the cache without touching the provider.
pub struct CachedBackend<B> {
    inner: B,
    cache: ResponseCache,
}

impl<B: Backend> CachedBackend<B> {
    pub fn new(inner: B, cache: ResponseCache) -> Self {
        CachedBackend { inner, cache }
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: Backend> Backend for CachedBackend<B> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let digest = request.digest();
        if let Some(hit) = self.cache.get(&digest) {
            return Ok(hit.response_text);
        }
        let text = self.inner.complete(request)?;
        if text.trim().is_empty() {
            return Err(BackendError::EmptyResponse);
        }
        let created_at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        self.cache.insert(CachedResponse {
            request_digest: digest,
            response_text: text.clone(),
            created_at,
            backend_id: self.inner.id(),
            model_name: request.model_name.clone(),
            temperature: request.temperature,
            completion_index: request.completion_index,
        })?;
        Ok(text)
    }
}
