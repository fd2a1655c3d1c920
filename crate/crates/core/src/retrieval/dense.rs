use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use super::top_k;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::ScoredDoc;

/// Documents per scoring chunk in exhaustive search.
const CHUNK: usize = 2048;

/// Dense document vectors, searched exhaustively by inner product.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dimension: usize,
    doc_ids: Vec<String>,
    /// Row-major, `doc_ids.len() × dimension`.
    data: Vec<f32>,
}

impl EmbeddingStore {
    pub fn new(dimension: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::Validation("embedding dimension must be positive".into()));
        }
        Ok(EmbeddingStore {
            dimension,
            doc_ids: Vec::new(),
            data: Vec::new(),
        })
    }

    pub fn from_vectors<I>(dimension: usize, vectors: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<f32>)>,
    {
        let mut store = Self::new(dimension)?;
        let mut seen = HashSet::new();
        for (id, v) in vectors {
            if !seen.insert(id.clone()) {
                return Err(Error::Duplicate(format!("vector for {id}")));
            }
            store.push(id, &v)?;
        }
        Ok(store)
    }

    fn push(&mut self, doc_id: String, v: &[f32]) -> Result<()> {
        if v.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                actual: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Validation(format!("vector for {doc_id} has non-finite components")));
        }
        self.doc_ids.push(doc_id);
        self.data.extend_from_slice(v);
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.data[i * self.dimension..(i + 1) * self.dimension]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.doc_ids
            .iter()
            .map(String::as_str)
            .zip(self.data.chunks_exact(self.dimension))
    }

    /// Exact top-`k` by inner product; ties by ascending doc id.
    pub fn search(&self, query: &[f32], k: usize, exec: Execution) -> Result<Vec<ScoredDoc>> {
        if query.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                actual: query.len(),
            });
        }
        if k == 0 || self.is_empty() {
            return Ok(Vec::new());
        }
        let dim = self.dimension;
        let order = |a: &(usize, f64), b: &(usize, f64)| {
            b.1.total_cmp(&a.1).then_with(|| self.doc_ids[a.0].cmp(&self.doc_ids[b.0]))
        };
        let partials = exec.map_chunks(&self.doc_ids, CHUNK, |offset, ids| {
            let mut hits: Vec<(usize, f64)> = (offset..offset + ids.len())
                .map(|i| (i, inner_product(&self.data[i * dim..(i + 1) * dim], query)))
                .collect();
            // Ids are only cloned for the chunk's survivors.
            if hits.len() > k {
                hits.select_nth_unstable_by(k - 1, order);
                hits.truncate(k);
            }
            hits.into_iter()
                .map(|(i, s)| ScoredDoc::new(self.doc_ids[i].clone(), s))
                .collect::<Vec<_>>()
        });
        Ok(top_k(partials.into_iter().flatten().collect(), k))
    }
}

/// f64 accumulation in component order.
pub(crate) fn inner_product(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0f64, |acc, (&x, &y)| acc + x as f64 * y as f64)
}

/// Parses `doc_id<TAB>v1,v2,...,vD` lines; all rows must share one dimension.
pub fn parse_vectors(document: &[u8]) -> Result<EmbeddingStore> {
    let text = std::str::from_utf8(document)
        .map_err(|e| Error::parse("vectors", format!("not UTF-8: {e}")))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let loc = || format!("line {}", i + 1);
        let (id, values) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(loc(), "expected doc_id<TAB>v1,v2,..."))?;
        let v = values
            .split(',')
            .map(|x| x.trim().parse::<f32>())
            .collect::<std::result::Result<Vec<f32>, _>>()
            .map_err(|e| Error::parse(loc(), format!("bad component: {e}")))?;
        rows.push((id.to_string(), v));
    }
    let Some(dim) = rows.first().map(|(_, v)| v.len()) else {
        return Err(Error::parse("vectors", "no vectors"));
    };
    EmbeddingStore::from_vectors(dim, rows)
}

pub fn read_vectors(path: &Path) -> Result<EmbeddingStore> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_vectors(&bytes)
}

pub fn write_vectors(store: &EmbeddingStore) -> Vec<u8> {
    let mut out = String::new();
    for (id, v) in store.iter() {
        let _ = writeln!(out, "{id}\t{}", join_f32(v));
    }
    out.into_bytes()
}

pub(crate) fn join_f32(v: &[f32]) -> String {
    let mut s = String::with_capacity(v.len() * 10);
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{x}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> EmbeddingStore {
        EmbeddingStore::from_vectors(
            2,
            vec![("dA".into(), vec![1.0, 0.0]), ("dB".into(), vec![0.0, 1.0])],
        )
        .unwrap()
    }

    fn pairs(v: Vec<ScoredDoc>) -> Vec<(String, f64)> {
        v.into_iter().map(|d| (d.doc_id, d.score)).collect()
    }

    #[test]
    fn orthonormal_and_mixed_queries() {
        for exec in Execution::available() {
            let s = store();
            assert_eq!(
                pairs(s.search(&[1.0, 0.0], 2, exec).unwrap()),
                [("dA".to_string(), 1.0), ("dB".to_string(), 0.0)]
            );
            let got = pairs(s.search(&[0.6, 0.8], 2, exec).unwrap());
            assert_eq!(got[0].0, "dB");
            assert!((got[0].1 - 0.8).abs() < 1e-6);
            assert_eq!(got[1].0, "dA");
            assert!((got[1].1 - 0.6).abs() < 1e-6);
            assert_eq!(s.search(&[1.0, 1.0], 10, exec).unwrap().len(), 2);
        }
    }

    #[test]
    fn dimension_checks() {
        let s = store();
        assert!(matches!(
            s.search(&[1.0], 1, Execution::Sequential),
            Err(Error::DimensionMismatch { expected: 2, actual: 1 })
        ));
        assert!(EmbeddingStore::from_vectors(2, vec![("x".into(), vec![1.0])]).is_err());
        assert!(EmbeddingStore::from_vectors(1, vec![("x".into(), vec![f32::NAN])]).is_err());
    }

    #[test]
    fn vectors_file_round_trip() {
        let s = store();
        let back = parse_vectors(&write_vectors(&s)).unwrap();
        assert_eq!(back, s);
        assert!(parse_vectors(b"a\t1,2\nb\t1").is_err());
    }
}
