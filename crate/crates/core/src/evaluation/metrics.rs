//! Per-turn ranking metrics with trec_eval semantics.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::model::ScoredDoc;

/// Judgments for one turn: doc id to grade.
pub type TurnQrels = BTreeMap<String, i32>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    Mrr,
    Ndcg(usize),
    Map,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Mrr => f.write_str("mrr"),
            Metric::Ndcg(k) => write!(f, "ndcg@{k}"),
            Metric::Map => f.write_str("map"),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "mrr" | "recip_rank" => return Ok(Metric::Mrr),
            "map" => return Ok(Metric::Map),
            _ => {}
        }
        let k = s
            .strip_prefix("ndcg@")
            .or_else(|| s.strip_prefix("ndcg_cut_"))
            .or_else(|| s.strip_prefix("n@"))
            .and_then(|k| k.parse::<usize>().ok())
            .filter(|&k| k >= 1);
        k.map(Metric::Ndcg)
            .ok_or_else(|| Error::Validation(format!("unknown metric `{s}`")))
    }
}

impl Serialize for Metric {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Metric {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Reciprocal rank of the first document graded at least `threshold`.
pub fn mrr(ranking: &[ScoredDoc], qrels: &TurnQrels, threshold: i32) -> f64 {
    ranking
        .iter()
        .position(|d| qrels.get(&d.doc_id).is_some_and(|&g| g >= threshold))
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

/// NDCG@k with linear gain and a log2(rank + 1) discount. Zero when the
/// turn has no positive grade.
pub fn ndcg_at_k(ranking: &[ScoredDoc], qrels: &TurnQrels, k: usize) -> f64 {
    let discount = |i: usize| ((i + 2) as f64).log2();
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, d)| f64::from(qrels.get(&d.doc_id).copied().unwrap_or(0).max(0)) / discount(i))
        .sum();
    let mut ideal: Vec<i32> = qrels.values().copied().filter(|&g| g > 0).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| f64::from(g) / discount(i))
        .sum();
    if idcg > 0.0 {
        dcg / idcg
    } else {
        0.0
    }
}

/// Average precision over all relevant documents in `qrels`, retrieved or
/// not. `None` when the turn has no relevant document.
pub fn average_precision(ranking: &[ScoredDoc], qrels: &TurnQrels, threshold: i32) -> Option<f64> {
    let total = qrels.values().filter(|&&g| g >= threshold).count();
    if total == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, d) in ranking.iter().enumerate() {
        if qrels.get(&d.doc_id).is_some_and(|&g| g >= threshold) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Some(sum / total as f64)
}

/// Value of `metric` for one turn; `None` only for MAP on a turn without
/// relevant documents.
pub fn turn_metric(metric: Metric, ranking: &[ScoredDoc], qrels: &TurnQrels, threshold: i32) -> Option<f64> {
    match metric {
        Metric::Mrr => Some(mrr(ranking, qrels, threshold)),
        Metric::Ndcg(k) => Some(ndcg_at_k(ranking, qrels, k)),
        Metric::Map => average_precision(ranking, qrels, threshold),
    }
}
