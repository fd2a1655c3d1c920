//! Text embedding through an external provider, cached by content hash.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::Duration;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::dense::join_f32;
use crate::error::{Error, Result};
use crate::http::{JsonClient, RetryPolicy};

pub trait EmbeddingProvider: Send + Sync {
    /// Model identifier; part of the cache key.
    fn model(&self) -> &str;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>>;
}

/// OpenAI-style `/embeddings` endpoint: `{model, input: [..]}` →
/// `{data: [{index, embedding}]}`.
pub struct HttpEmbeddingProvider {
    client: JsonClient,
    model: String,
}

impl HttpEmbeddingProvider {
    pub fn new(url: &str, model: &str, api_key: Option<String>, retry: RetryPolicy) -> Result<Self> {
        Ok(HttpEmbeddingProvider {
            client: JsonClient::new(url, api_key, retry, Duration::from_secs(120))?,
            model: model.to_string(),
        })
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn model(&self) -> &str {
        &self.model
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        let body = json!({ "model": self.model, "input": texts });
        let resp = self.client.post(&body)?;
        let bad = |m: &str| Error::Endpoint {
            attempts: 1,
            status: Some(200),
            message: format!("malformed embedding response: {m}"),
        };
        let data = resp
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| bad("missing data"))?;
        let mut out: Vec<Option<Vec<f32>>> = vec![None; texts.len()];
        for (pos, item) in data.iter().enumerate() {
            let index = item
                .get("index")
                .and_then(Value::as_u64)
                .map_or(pos, |i| i as usize);
            let v = item
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| bad("missing embedding"))?
                .iter()
                .map(|x| x.as_f64().map(|f| f as f32))
                .collect::<Option<Vec<f32>>>()
                .ok_or_else(|| bad("non-numeric component"))?;
            *out.get_mut(index).ok_or_else(|| bad("index out of range"))? = Some(v);
        }
        out.into_iter()
            .map(|v| v.ok_or_else(|| bad("missing vector for an input")))
            .collect()
    }
}

/// Append-only `key<TAB>v1,v2,...` file plus an in-memory map.
pub struct EmbeddingCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, Vec<f32>>>,
    writer: Mutex<Option<File>>,
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        EmbeddingCache {
            path: None,
            entries: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
        }
    }

    pub fn open(path: &Path) -> Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            for (i, line) in text.lines().enumerate() {
                if line.is_empty() {
                    continue;
                }
                let corrupt = |m: String| Error::CacheCorrupt {
                    path: path.to_path_buf(),
                    message: format!("line {}: {m}", i + 1),
                };
                let (key, values) = line
                    .split_once('\t')
                    .ok_or_else(|| corrupt("missing tab".into()))?;
                let v = values
                    .split(',')
                    .map(str::parse::<f32>)
                    .collect::<std::result::Result<Vec<f32>, _>>()
                    .map_err(|e| corrupt(e.to_string()))?;
                entries.insert(key.to_string(), v);
            }
        } else if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        Ok(EmbeddingCache {
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

    fn get(&self, key: &str) -> Option<Vec<f32>> {
        self.entries.read().expect("cache lock").get(key).cloned()
    }

    fn append(&self, records: &[(String, Vec<f32>)]) -> Result<()> {
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
            let mut buf = String::new();
            for (k, v) in records {
                buf.push_str(k);
                buf.push('\t');
                buf.push_str(&join_f32(v));
                buf.push('\n');
            }
            let file = writer.as_mut().expect("opened above");
            file.write_all(buf.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|e| Error::io(path, e))?;
        }
        let mut entries = self.entries.write().expect("cache lock");
        for (k, v) in records {
            entries.insert(k.clone(), v.clone());
        }
        Ok(())
    }
}

/// Cached embedding front-end. All vectors must share one dimension.
pub struct Embedder {
    provider: Box<dyn EmbeddingProvider>,
    cache: EmbeddingCache,
    batch_size: usize,
    dimension: Mutex<Option<usize>>,
}

impl Embedder {
    pub fn new(provider: Box<dyn EmbeddingProvider>, cache: EmbeddingCache) -> Self {
        Embedder {
            provider,
            cache,
            batch_size: 64,
            dimension: Mutex::new(None),
        }
    }

    pub fn with_batch_size(mut self, n: usize) -> Self {
        self.batch_size = n.max(1);
        self
    }

    /// Pins the expected dimension (e.g. that of a document store).
    pub fn with_dimension(self, dim: usize) -> Self {
        *self.dimension.lock().expect("dimension lock") = Some(dim);
        self
    }

    pub fn cache(&self) -> &EmbeddingCache {
        &self.cache
    }

    pub fn cache_key(&self, text: &str) -> String {
        let mut h = Sha256::new();
        h.update(self.provider.model().as_bytes());
        h.update([0u8]);
        h.update(text.as_bytes());
        hex::encode(h.finalize())
    }

    fn check_dimension(&self, v: &[f32]) -> Result<()> {
        let mut dim = self.dimension.lock().expect("dimension lock");
        match *dim {
            None => {
                *dim = Some(v.len());
                Ok(())
            }
            Some(d) if d == v.len() => Ok(()),
            Some(d) => Err(Error::DimensionMismatch {
                expected: d,
                actual: v.len(),
            }),
        }
    }

    /// One vector per input. Misses are fetched in input order, in batches,
    /// and appended to the cache in that same order.
    pub fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        let keys: Vec<String> = texts.iter().map(|t| self.cache_key(t)).collect();
        let mut missing: Vec<usize> = Vec::new();
        let mut queued = std::collections::HashSet::new();
        for (i, k) in keys.iter().enumerate() {
            if self.cache.get(k).is_none() && queued.insert(k.as_str()) {
                missing.push(i);
            }
        }
        for batch in missing.chunks(self.batch_size) {
            let inputs: Vec<String> = batch.iter().map(|&i| texts[i].clone()).collect();
            let vectors = self.provider.embed(&inputs)?;
            if vectors.len() != inputs.len() {
                return Err(Error::Endpoint {
                    attempts: 1,
                    status: None,
                    message: format!("provider returned {} vectors for {} inputs", vectors.len(), inputs.len()),
                });
            }
            let mut records = Vec::with_capacity(batch.len());
            for (&i, v) in batch.iter().zip(vectors) {
                self.check_dimension(&v)?;
                records.push((keys[i].clone(), v));
            }
            self.cache.append(&records)?;
        }
        keys.iter()
            .map(|k| {
                let v = self.cache.get(k).expect("populated above");
                self.check_dimension(&v)?;
                Ok(v)
            })
            .collect()
    }
}
