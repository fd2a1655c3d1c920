//! Append-only response cache keyed by a hash of (model, temperature, messages).

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::client::ChatRequest;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CachedResponse {
    pub cache_key: String,
    /// Short readable summary of the request, for auditing the file.
    pub request_digest: String,
    pub text: String,
    /// Seconds since the Unix epoch when the record was written.
    pub timestamp: u64,
}

/// SHA-256 over length-prefixed fields, so distinct triples cannot collide
/// through concatenation.
pub fn cache_key(request: &ChatRequest) -> String {
    let mut h = Sha256::new();
    let mut field = |bytes: &[u8]| {
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    };
    field(request.model.as_bytes());
    field(&request.temperature.to_bits().to_le_bytes());
    field(&(request.messages.len() as u64).to_le_bytes());
    for m in &request.messages {
        field(m.role.as_str().as_bytes());
        field(m.content.as_bytes());
    }
    hex::encode(h.finalize())
}

fn request_digest(request: &ChatRequest) -> String {
    let prompt: String = request.prompt().chars().take(80).collect();
    format!(
        "{} t={} n={} | {}",
        request.model,
        request.temperature,
        request.messages.len(),
        prompt.replace('\n', " ")
    )
}

pub struct ResponseCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, String>>,
    writer: Mutex<Option<File>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        ResponseCache {
            path: None,
            entries: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
        }
    }

    /// Loads every record of a JSON-lines cache file (a missing file is an
    /// empty cache). Later records win.
    pub fn open(path: &Path) -> Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let rec: CachedResponse =
                    serde_json::from_str(line).map_err(|e| Error::CacheCorrupt {
                        path: path.to_path_buf(),
                        message: format!("line {}: {e}", i + 1),
                    })?;
                entries.insert(rec.cache_key, rec.text);
            }
        } else if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        Ok(ResponseCache {
            path: Some(path.to_path_buf()),
            entries: RwLock::new(entries),
            writer: Mutex::new(None),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.entries.read().expect("cache lock").get(key).cloned()
    }

    pub fn put(&self, request: &ChatRequest, key: &str, text: &str) -> Result<()> {
        let mut writer = self.writer.lock().expect("cache writer lock");
        if let Some(path) = &self.path {
            if writer.is_none() {
                *writer = Some(
                    OpenOptions::new()
                        .create(true)
                        .append(true)
                        .open(path)
                        .map_err(|e| Error::io(path, e))?,
                );
            }
            let rec = CachedResponse {
                cache_key: key.to_string(),
                request_digest: request_digest(request),
                text: text.to_string(),
                timestamp: std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map_or(0, |d| d.as_secs()),
            };
            let mut line = serde_json::to_string(&rec).expect("record serializes");
            line.push('\n');
            let file = writer.as_mut().expect("opened above");
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|e| Error::io(path, e))?;
        }
        self.entries
            .write()
            .expect("cache lock")
            .insert(key.to_string(), text.to_string());
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::client::ChatMessage;

    fn req(model: &str, t: f64, msgs: &[&str]) -> ChatRequest {
        ChatRequest {
            model: model.into(),
            messages: msgs.iter().map(|m| ChatMessage::user(*m)).collect(),
            temperature: t,
            max_tokens: 100,
        }
    }

    #[test]
    fn keys_distinguish_every_component() {
        let base = cache_key(&req("m", 0.0, &["ab", "c"]));
        assert_eq!(base, cache_key(&req("m", 0.0, &["ab", "c"])));
        assert_ne!(base, cache_key(&req("m2", 0.0, &["ab", "c"])));
        assert_ne!(base, cache_key(&req("m", 0.5, &["ab", "c"])));
        assert_ne!(base, cache_key(&req("m", 0.0, &["a", "bc"])));
        assert_ne!(base, cache_key(&req("m", 0.0, &["abc"])));
        // max_tokens is not part of the key
        let mut r = req("m", 0.0, &["ab", "c"]);
        r.max_tokens = 1;
        assert_eq!(base, cache_key(&r));
    }

    #[test]
    fn file_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/chat.jsonl");
        let r = req("m", 0.0, &["hello\nworld"]);
        {
            let c = ResponseCache::open(&path).unwrap();
            c.put(&r, &cache_key(&r), "line1\n\"quoted\"\ttab").unwrap();
        }
        let c = ResponseCache::open(&path).unwrap();
        assert_eq!(c.get(&cache_key(&r)).unwrap(), "line1\n\"quoted\"\ttab");

        std::fs::write(&path, "{not json\n").unwrap();
        match ResponseCache::open(&path) {
            Err(Error::CacheCorrupt { path: p, .. }) => assert_eq!(p, path),
            _ => panic!("expected corruption error"),
        }
    }
}
