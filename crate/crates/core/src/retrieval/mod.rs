//! Sparse (BM25) and dense (exact inner product) retrieval.

mod analyzer;
mod bm25;
mod dense;
mod embed;

pub use analyzer::{tokenize, Analyzer};
pub use bm25::{build_index, Bm25Params, InvertedIndex};
pub use dense::{parse_vectors, read_vectors, write_vectors, EmbeddingStore};
pub use embed::{EmbeddingCache, EmbeddingProvider, Embedder, HttpEmbeddingProvider};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::ScoredDoc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrieverKind {
    Sparse,
    Dense,
}

impl RetrieverKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RetrieverKind::Sparse => "sparse",
            RetrieverKind::Dense => "dense",
        }
    }
}

impl std::str::FromStr for RetrieverKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sparse" | "bm25" => Ok(RetrieverKind::Sparse),
            "dense" | "ance" => Ok(RetrieverKind::Dense),
            other => Err(crate::Error::Validation(format!("unknown retriever `{other}`"))),
        }
    }
}

impl std::fmt::Display for RetrieverKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Anything that turns a query string into a ranked list.
pub trait Retriever: Sync {
    fn search(&self, query: &str, k: usize) -> Result<Vec<ScoredDoc>>;
}

/// BM25 over an [`InvertedIndex`] with fixed parameters.
#[derive(Debug, Clone, Copy)]
pub struct SparseRetriever<'a> {
    pub index: &'a InvertedIndex,
    pub params: Bm25Params,
}

impl Retriever for SparseRetriever<'_> {
    fn search(&self, query: &str, k: usize) -> Result<Vec<ScoredDoc>> {
        Ok(self.index.search(query, k, self.params))
    }
}

/// Embeds the query, then searches an [`EmbeddingStore`].
pub struct DenseRetriever<'a> {
    pub store: &'a EmbeddingStore,
    pub embedder: &'a Embedder,
}

impl Retriever for DenseRetriever<'_> {
    fn search(&self, query: &str, k: usize) -> Result<Vec<ScoredDoc>> {
        let vectors = self.embedder.embed_texts(&[query.to_string()])?;
        self.store
            .search(&vectors[0], k, crate::exec::Execution::Sequential)
    }
}

/// Keeps the best `k` by [`crate::model::rank_order`], sorted.
pub(crate) fn top_k(mut docs: Vec<ScoredDoc>, k: usize) -> Vec<ScoredDoc> {
    if k == 0 {
        return Vec::new();
    }
    if docs.len() > k {
        docs.select_nth_unstable_by(k - 1, crate::model::rank_order);
        docs.truncate(k);
    }
    docs.sort_by(crate::model::rank_order);
    docs
}
