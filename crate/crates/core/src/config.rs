//! Experiment configuration, read from a single TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::annotation::ImpactSettings;
use crate::error::{Error, Result};
use crate::evaluation::MetricConfig;
use crate::http::RetryPolicy;
use crate::llm::GatewaySettings;
use crate::reformulation::Strategy;
use crate::retrieval::{Bm25Params, RetrieverKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Test-split topics.
    pub topics: PathBuf,
    pub qrels: PathBuf,
    pub collection: PathBuf,
    /// Training-split topics and qrels; needed for few-shot demonstrations.
    #[serde(default)]
    pub train_topics: Option<PathBuf>,
    #[serde(default)]
    pub train_qrels: Option<PathBuf>,
    /// Precomputed document vectors; when absent `embed` builds them.
    #[serde(default)]
    pub vectors: Option<PathBuf>,
    #[serde(default = "default_cache_dir")]
    pub cache_dir: PathBuf,
    #[serde(default)]
    pub templates_dir: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_cache_dir() -> PathBuf {
    "cache".into()
}

fn default_output_dir() -> PathBuf {
    "output".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub k1: f64,
    pub b: f64,
    pub stemming: bool,
    /// Ranked list length written to run files.
    pub depth: usize,
    /// Expected embedding dimension; checked when set.
    pub dense_dimension: Option<usize>,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        let p = Bm25Params::default();
        RetrievalConfig {
            k1: p.k1,
            b: p.b,
            stemming: true,
            depth: 1000,
            dense_dimension: None,
        }
    }
}

impl RetrievalConfig {
    pub fn bm25(&self) -> Bm25Params {
        Bm25Params { k1: self.k1, b: self.b }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub endpoint: String,
    #[serde(flatten)]
    pub settings: GatewaySettings,
    pub retry: RetryPolicy,
    /// Maximum concurrent model calls.
    pub parallelism: usize,
    /// Show prior canonical responses in the conversation history.
    pub include_responses: bool,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            settings: GatewaySettings::default(),
            retry: RetryPolicy::default(),
            parallelism: 4,
            include_responses: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub endpoint: String,
    pub model: String,
    pub batch_size: usize,
    pub retry: RetryPolicy,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            endpoint: "https://api.openai.com/v1/embeddings".into(),
            model: "text-embedding-3-small".into(),
            batch_size: 64,
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub strategies: Vec<Strategy>,
    pub shots: Vec<usize>,
    pub retrievers: Vec<RetrieverKind>,
    /// Strategy whose runs are the reference for significance markers.
    pub baseline: Option<Strategy>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            strategies: vec![
                Strategy::None,
                Strategy::All,
                Strategy::Human,
                Strategy::Automatic,
                Strategy::Str,
                Strategy::Sar,
            ],
            shots: vec![0, 1, 3, 5],
            retrievers: vec![RetrieverKind::Sparse, RetrieverKind::Dense],
            baseline: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    /// Environment variable holding the API key for both endpoints.
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    pub paths: Paths,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
    #[serde(default)]
    pub gateway: GatewayConfig,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub metrics: MetricConfig,
    #[serde(default)]
    pub impact: ImpactSettings,
}

fn default_api_key_env() -> String {
    "OPENAI_API_KEY".into()
}

impl ExperimentConfig {
    /// Parses TOML; relative paths resolve against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.resolve_paths(base_dir);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let p = &mut self.paths;
        for path in [&mut p.topics, &mut p.qrels, &mut p.collection, &mut p.cache_dir, &mut p.output_dir] {
            fix(path);
        }
        for path in [&mut p.train_topics, &mut p.train_qrels, &mut p.vectors, &mut p.templates_dir]
            .into_iter()
            .flatten()
        {
            fix(path);
        }
    }

    /// Checks input paths exist and the grid is well formed.
    pub fn validate(&self) -> Result<()> {
        let p = &self.paths;
        let required = [Some(&p.topics), Some(&p.qrels), Some(&p.collection)];
        let optional = [p.train_topics.as_ref(), p.train_qrels.as_ref(), p.vectors.as_ref(), p.templates_dir.as_ref()];
        for path in required.into_iter().chain(optional).flatten() {
            if !path.exists() {
                return Err(Error::Config(format!("path does not exist: {}", path.display())));
            }
        }
        if p.train_topics.is_some() != p.train_qrels.is_some() {
            return Err(Error::Config("train_topics and train_qrels must be given together".into()));
        }
        if self.grid.shots.iter().any(|&k| k > 0) && p.train_topics.is_none() {
            return Err(Error::Config("few-shot runs need paths.train_topics and paths.train_qrels".into()));
        }
        if self.grid.strategies.is_empty() || self.grid.shots.is_empty() || self.grid.retrievers.is_empty() {
            return Err(Error::Config("strategy, shot, and retriever grids must be non-empty".into()));
        }
        if self.retrieval.depth == 0 {
            return Err(Error::Config("retrieval depth must be >= 1".into()));
        }
        if !(self.retrieval.k1 >= 0.0 && (0.0..=1.0).contains(&self.retrieval.b)) {
            return Err(Error::Config("BM25 needs k1 >= 0 and 0 <= b <= 1".into()));
        }
        self.metrics.validate()
    }

    /// SHA-256 of the canonical TOML serialization, first 16 hex digits.
    pub fn hash(&self) -> String {
        let canonical = toml::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn api_key(&self) -> Option<String> {
        std::env::var(&self.api_key_env).ok().filter(|k| !k.is_empty())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 3
[paths]
topics = "t.json"
qrels = "q.txt"
collection = "c.tsv"
"#;

    #[test]
    fn defaults_and_relative_paths() {
        let cfg = ExperimentConfig::from_toml(MINIMAL, Path::new("/data")).unwrap();
        assert_eq!(cfg.paths.topics, Path::new("/data/t.json"));
        assert_eq!(cfg.paths.output_dir, Path::new("/data/output"));
        assert_eq!(cfg.retrieval.k1, 0.9);
        assert_eq!(cfg.retrieval.depth, 1000);
        assert_eq!(cfg.gateway.settings.temperature, 0.0);
        assert_eq!(cfg.grid.shots, [0, 1, 3, 5]);
        assert_eq!(cfg.grid.strategies.len(), 6);
        assert_eq!(cfg.metrics.threshold, 1);
        assert_eq!(cfg.impact.metric, crate::evaluation::Metric::Ndcg(3));
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::from_toml(MINIMAL, Path::new("/d")).unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 4;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn rejects_unknown_fields_and_strategies() {
        let bad = format!("{MINIMAL}\n[grid]\nstrategies = [\"magic\"]\n");
        assert!(ExperimentConfig::from_toml(&bad, Path::new(".")).is_err());
        let bad = format!("{MINIMAL}\n[retrieval]\nkone = 1.0\n");
        assert!(ExperimentConfig::from_toml(&bad, Path::new(".")).is_err());
    }

    #[test]
    fn validate_checks_paths() {
        let cfg = ExperimentConfig::from_toml(MINIMAL, Path::new("/nonexistent")).unwrap();
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("t.json"), "{err}");
    }
}
