//! BM25 inverted index.
//!
//! Scoring uses the Lucene form without the `(k1 + 1)` numerator factor:
//!
//! ```text
//! score(q, d) = Σ_{t ∈ q} idf(t) · tf / (tf + k1 · (1 − b + b · dl / avgdl))
//! idf(t)      = ln(1 + (N − df + 0.5) / (df + 0.5))
//! ```
//!
//! Query terms are summed with multiplicity, so a term occurring twice in the
//! query contributes twice.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{top_k, Analyzer};
use crate::error::{Error, Result};
use crate::model::{Document, ScoredDoc};

const MAGIC: &[u8; 8] = b"PCIRIDX\x01";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 0.9, b: 0.4 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvertedIndex {
    /// term → (internal doc id, tf), sorted by internal id.
    postings: BTreeMap<String, Vec<(u32, u32)>>,
    doc_lengths: Vec<u32>,
    doc_ids: Vec<String>,
    avg_doc_length: f64,
    stemming: bool,
    #[serde(skip, default = "default_analyzer")]
    analyzer: Analyzer,
}

fn default_analyzer() -> Analyzer {
    Analyzer::new(false)
}

/// Distinct terms with their counts, in first-occurrence order. Both the
/// accumulator search and the single-document scorer sum in this order, so
/// they agree bit for bit.
fn grouped(terms: &[String]) -> Vec<(&str, usize)> {
    let mut out: Vec<(&str, usize)> = Vec::new();
    for t in terms {
        match out.iter_mut().find(|(s, _)| *s == t) {
            Some((_, n)) => *n += 1,
            None => out.push((t, 1)),
        }
    }
    out
}

pub fn build_index<I>(docs: I, stemming: bool) -> Result<InvertedIndex>
where
    I: IntoIterator<Item = Document>,
{
    let analyzer = Analyzer::new(stemming);
    let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
    let mut doc_lengths = Vec::new();
    let mut doc_ids = Vec::new();
    let mut seen = HashSet::new();
    for doc in docs {
        if !seen.insert(doc.doc_id.clone()) {
            return Err(Error::Duplicate(format!("doc_id {}", doc.doc_id)));
        }
        let internal = u32::try_from(doc_ids.len())
            .map_err(|_| Error::Validation("collection exceeds u32 documents".into()))?;
        let tokens = analyzer.analyze(&doc.text);
        let mut tf: HashMap<String, u32> = HashMap::new();
        for t in &tokens {
            *tf.entry(t.clone()).or_default() += 1;
        }
        for (term, count) in tf {
            postings.entry(term).or_default().push((internal, count));
        }
        doc_lengths.push(tokens.len() as u32);
        doc_ids.push(doc.doc_id);
    }
    let avg_doc_length = if doc_lengths.is_empty() {
        0.0
    } else {
        doc_lengths.iter().map(|&l| l as f64).sum::<f64>() / doc_lengths.len() as f64
    };
    Ok(InvertedIndex {
        postings,
        doc_lengths,
        doc_ids,
        avg_doc_length,
        stemming,
        analyzer,
    })
}

impl InvertedIndex {
    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn stemming(&self) -> bool {
        self.stemming
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_length(&self, internal: usize) -> u32 {
        self.doc_lengths[internal]
    }

    pub fn internal_id(&self, doc_id: &str) -> Option<usize> {
        self.doc_ids.iter().position(|d| d == doc_id)
    }

    pub fn document_frequency(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn term_frequency(&self, term: &str, internal: usize) -> u32 {
        self.postings
            .get(term)
            .and_then(|p| {
                p.binary_search_by_key(&(internal as u32), |&(d, _)| d)
                    .ok()
                    .map(|i| p[i].1)
            })
            .unwrap_or(0)
    }

    pub fn analyze(&self, text: &str) -> Vec<String> {
        self.analyzer.analyze(text)
    }

    pub fn idf(&self, df: usize) -> f64 {
        let n = self.doc_count() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn term_weight(&self, tf: u32, dl: u32, params: Bm25Params) -> f64 {
        let tf = tf as f64;
        let norm = 1.0 - params.b + params.b * dl as f64 / self.avg_doc_length;
        tf / (tf + params.k1 * norm)
    }

    /// Score of one document (by internal id) for already-analyzed terms.
    pub fn score(&self, query_terms: &[String], internal: usize, params: Bm25Params) -> f64 {
        let dl = self.doc_lengths[internal];
        let mut total = 0.0;
        for (term, times) in grouped(query_terms) {
            let df = self.document_frequency(term);
            let tf = self.term_frequency(term, internal);
            if df == 0 || tf == 0 {
                continue;
            }
            let w = self.idf(df) * self.term_weight(tf, dl, params);
            for _ in 0..times {
                total += w;
            }
        }
        total
    }

    /// Top-`k` documents with positive score; ties by ascending doc id.
    pub fn search(&self, query: &str, k: usize, params: Bm25Params) -> Vec<ScoredDoc> {
        let terms = self.analyze(query);
        self.search_terms(&terms, k, params)
    }

    pub fn search_terms(&self, terms: &[String], k: usize, params: Bm25Params) -> Vec<ScoredDoc> {
        if self.doc_count() == 0 || k == 0 {
            return Vec::new();
        }
        let mut acc: HashMap<u32, f64> = HashMap::new();
        for (term, times) in grouped(terms) {
            let Some(list) = self.postings.get(term) else {
                continue;
            };
            let idf = self.idf(list.len());
            for &(doc, tf) in list {
                let w = idf * self.term_weight(tf, self.doc_lengths[doc as usize], params);
                let slot = acc.entry(doc).or_insert(0.0);
                for _ in 0..times {
                    *slot += w;
                }
            }
        }
        let hits: Vec<ScoredDoc> = acc
            .into_iter()
            .filter(|&(_, s)| s > 0.0)
            .map(|(d, s)| ScoredDoc::new(self.doc_ids[d as usize].clone(), s))
            .collect();
        top_k(hits, k)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.extend(serde_json::to_vec(self).expect("index serializes"));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let body = bytes
            .strip_prefix(MAGIC.as_slice())
            .ok_or_else(|| Error::parse("index", "missing or unsupported index header"))?;
        let mut index: InvertedIndex = serde_json::from_slice(body)
            .map_err(|e| Error::parse("index", e.to_string()))?;
        index.analyzer = Analyzer::new(index.stemming);
        Ok(index)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corpus() -> InvertedIndex {
        build_index(
            vec![
                Document::new("d1", "apple banana"),
                Document::new("d2", "apple apple cherry"),
                Document::new("d3", "cherry"),
            ],
            false,
        )
        .unwrap()
    }

    fn terms(q: &str) -> Vec<String> {
        super::super::tokenize(q)
    }

    #[test]
    fn index_statistics() {
        let idx = corpus();
        assert_eq!(idx.doc_count(), 3);
        assert!((idx.avg_doc_length() - 2.0).abs() < 1e-12);
        assert_eq!(idx.term_frequency("apple", idx.internal_id("d2").unwrap()), 2);
        assert_eq!(idx.document_frequency("apple"), 2);
    }

    #[test]
    fn hand_derived_scores() {
        // idf(apple) = ln(1 + 1.5/2.5) = ln 1.6
        // d2: 2 / (2 + 0.9·(0.6 + 0.4·1.5)) = 2/3.08;  d1: 1 / (1 + 0.9·1) = 1/1.9
        let idx = corpus();
        let p = Bm25Params::default();
        let q = terms("apple");
        let d2 = idx.score(&q, idx.internal_id("d2").unwrap(), p);
        let d1 = idx.score(&q, idx.internal_id("d1").unwrap(), p);
        assert!((d2 - 0.3052).abs() < 1e-4, "{d2}");
        assert!((d1 - 0.2474).abs() < 1e-4, "{d1}");
        assert!((d2 - 1.6f64.ln() * 2.0 / 3.08).abs() < 1e-12);
    }

    #[test]
    fn search_orders_and_truncates() {
        let idx = corpus();
        let p = Bm25Params::default();
        let ids = |v: Vec<ScoredDoc>| v.into_iter().map(|d| d.doc_id).collect::<Vec<_>>();
        assert_eq!(ids(idx.search("apple", 10, p)), ["d2", "d1"]);
        assert_eq!(ids(idx.search("apple", 1, p)), ["d2"]);
        assert!(idx.search("durian", 10, p).is_empty());
        assert!(idx.search("", 10, p).is_empty());
    }

    #[test]
    fn absent_term_contributes_zero() {
        let idx = corpus();
        let p = Bm25Params::default();
        let d = idx.internal_id("d1").unwrap();
        assert_eq!(idx.score(&terms("apple durian"), d, p), idx.score(&terms("apple"), d, p));
    }

    #[test]
    fn identical_docs_tie_by_id() {
        let idx = build_index(
            vec![Document::new("b", "x y"), Document::new("a", "x y")],
            false,
        )
        .unwrap();
        let hits = idx.search("x", 10, Bm25Params::default());
        assert_eq!(hits[0].score, hits[1].score);
        assert_eq!(hits[0].doc_id, "a");
    }

    #[test]
    fn repeated_term_counts() {
        let idx = build_index(vec![Document::new("d", "z z z z z")], false).unwrap();
        assert_eq!(idx.term_frequency("z", 0), 5);
    }

    #[test]
    fn empty_index_and_duplicates() {
        let idx = build_index(Vec::new(), true).unwrap();
        assert_eq!(idx.doc_count(), 0);
        assert!(idx.search("anything", 5, Bm25Params::default()).is_empty());
        let dup = build_index(vec![Document::new("a", "x"), Document::new("a", "y")], false);
        assert!(matches!(dup, Err(Error::Duplicate(m)) if m.contains('a')));
    }

    #[test]
    fn persisted_index_round_trips() {
        let idx = build_index(vec![Document::new("d1", "Running shoes")], true).unwrap();
        let back = InvertedIndex::from_bytes(&idx.to_bytes()).unwrap();
        assert!(back.stemming());
        assert_eq!(
            back.search("run", 5, Bm25Params::default()),
            idx.search("run", 5, Bm25Params::default())
        );
        assert!(InvertedIndex::from_bytes(b"{}").is_err());
    }

    proptest! {
        #[test]
        fn score_non_decreasing_in_tf(extra in 0usize..6, filler in 0usize..6) {
            // Raise tf of "t" while keeping doc length fixed.
            let p = Bm25Params::default();
            let mk = |tf: usize| {
                let words: Vec<&str> = std::iter::repeat("t").take(tf)
                    .chain(std::iter::repeat("f").take(filler + 6 - tf)).collect();
                build_index(vec![Document::new("a", words.join(" ")), Document::new("b", "t other")], false).unwrap()
            };
            let lo = mk(1 + extra.min(4));
            let hi = mk(2 + extra.min(4));
            let q = vec!["t".to_string()];
            prop_assert!(hi.score(&q, 0, p) >= lo.score(&q, 0, p) - 1e-15);
        }
    }
}
