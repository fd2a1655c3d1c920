//! Run evaluation (MRR, NDCG@k, MAP), paired significance tests, and
//! method comparison tables.

mod metrics;
mod report;
mod ttest;

pub use metrics::{average_precision, mrr, ndcg_at_k, turn_metric, Metric, TurnQrels};
pub use report::{write_comparison, write_plot_data, write_report};
pub use ttest::{paired_t_test, TTestResult};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{rank_order, Qrels, Run, ScoredDoc, TurnId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    /// Minimum grade counted as relevant by MRR and MAP.
    pub threshold: i32,
    pub ndcg_ks: Vec<usize>,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            threshold: 1,
            ndcg_ks: vec![3, 5],
        }
    }
}

impl MetricConfig {
    /// Metrics in table order: MRR, NDCG@k ascending, MAP.
    pub fn metrics(&self) -> Vec<Metric> {
        let ks: BTreeSet<usize> = self.ndcg_ks.iter().copied().collect();
        std::iter::once(Metric::Mrr)
            .chain(ks.into_iter().map(Metric::Ndcg))
            .chain(std::iter::once(Metric::Map))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.threshold < 1 {
            return Err(Error::Config(format!("relevance threshold must be >= 1, got {}", self.threshold)));
        }
        if self.ndcg_ks.contains(&0) {
            return Err(Error::Config("NDCG cutoffs must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub tag: String,
    pub metrics: Vec<Metric>,
    /// Raw per-turn values in [0, 1]. MAP is absent for turns without a
    /// relevant document.
    pub per_turn: BTreeMap<TurnId, BTreeMap<Metric, f64>>,
    /// Mean per-turn value times 100.
    pub aggregates: BTreeMap<Metric, f64>,
    pub evaluated_turn_count: usize,
}

impl MetricReport {
    pub fn turns(&self) -> BTreeSet<TurnId> {
        self.per_turn.keys().cloned().collect()
    }

    /// Per-turn values of `metric`, keyed by turn.
    pub fn values(&self, metric: Metric) -> BTreeMap<&TurnId, f64> {
        self.per_turn
            .iter()
            .filter_map(|(t, m)| m.get(&metric).map(|v| (t, *v)))
            .collect()
    }

    pub fn aggregate(&self, metric: Metric) -> Option<f64> {
        self.aggregates.get(&metric).copied()
    }
}

/// Scores `run` on every assessed turn, restricted to `filter` when given.
/// Turns missing from the run score zero.
pub fn evaluate_run(
    run: &Run,
    qrels: &Qrels,
    config: &MetricConfig,
    filter: Option<&BTreeSet<TurnId>>,
    exec: Execution,
) -> Result<MetricReport> {
    config.validate()?;
    let turns: Vec<&TurnId> = qrels
        .turns()
        .filter(|t| filter.map_or(true, |f| f.contains(*t)))
        .collect();
    if turns.is_empty() {
        return Err(Error::Validation(format!("run `{}`: no assessed turns to evaluate", run.tag)));
    }
    let metrics = config.metrics();
    let empty = Vec::new();
    let rows = exec.map(&turns, |&turn| {
        let judged = qrels.for_turn(turn).expect("turn comes from qrels");
        let mut ranking: Vec<ScoredDoc> = run.rankings.get(turn).unwrap_or(&empty).clone();
        ranking.sort_by(rank_order);
        let values: BTreeMap<Metric, f64> = metrics
            .iter()
            .filter_map(|&m| turn_metric(m, &ranking, judged, config.threshold).map(|v| (m, v)))
            .collect();
        (turn.clone(), values)
    });
    let per_turn: BTreeMap<TurnId, BTreeMap<Metric, f64>> = rows.into_iter().collect();
    let aggregates = metrics
        .iter()
        .map(|&m| {
            let vals: Vec<f64> = per_turn.values().filter_map(|r| r.get(&m).copied()).collect();
            let mean = if vals.is_empty() {
                0.0
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            };
            (m, mean * 100.0)
        })
        .collect();
    Ok(MetricReport {
        tag: run.tag.clone(),
        metrics,
        evaluated_turn_count: per_turn.len(),
        per_turn,
        aggregates,
    })
}

/// One cell of a comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCell {
    /// Aggregate times 100.
    pub value: f64,
    pub best: bool,
    /// Best in its column and significantly better (p < 0.05) than every
    /// other method.
    pub significant_over_rest: bool,
    /// Significantly better than the designated baseline.
    pub significant_over_baseline: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub metrics: Vec<Metric>,
    pub methods: Vec<String>,
    pub baseline: Option<String>,
    pub turn_count: usize,
    /// `cells[method][metric]`.
    pub cells: BTreeMap<String, BTreeMap<Metric, ComparisonCell>>,
}

impl ComparisonTable {
    pub fn cell(&self, method: &str, metric: Metric) -> Option<&ComparisonCell> {
        self.cells.get(method)?.get(&metric)
    }
}

fn paired(a: &MetricReport, b: &MetricReport, metric: Metric) -> Result<TTestResult> {
    let va = a.values(metric);
    let vb = b.values(metric);
    let (xs, ys): (Vec<f64>, Vec<f64>) = va
        .iter()
        .filter_map(|(t, x)| vb.get(t).map(|y| (*x, *y)))
        .unzip();
    paired_t_test(&xs, &ys)
}

fn significantly_better(a: &MetricReport, b: &MetricReport, metric: Metric) -> bool {
    match paired(a, b, metric) {
        Ok(r) => r.significant_at_05 && r.t_statistic > 0.0,
        Err(_) => false,
    }
}

/// Builds a comparison over reports that share one turn set. Methods keep
/// the order given.
pub fn compare_methods(reports: &[MetricReport], baseline: Option<&str>) -> Result<ComparisonTable> {
    let Some(first) = reports.first() else {
        return Err(Error::Validation("no reports to compare".into()));
    };
    let turns = first.turns();
    for r in &reports[1..] {
        let other = r.turns();
        if other != turns {
            let differing: Vec<String> = turns
                .symmetric_difference(&other)
                .map(ToString::to_string)
                .collect();
            return Err(Error::Validation(format!(
                "reports `{}` and `{}` cover different turns: {}",
                first.tag,
                r.tag,
                differing.join(", ")
            )));
        }
        if r.metrics != first.metrics {
            return Err(Error::Validation(format!("report `{}` uses different metrics", r.tag)));
        }
    }
    let mut seen = BTreeSet::new();
    if let Some(dup) = reports.iter().find(|r| !seen.insert(r.tag.as_str())) {
        return Err(Error::Duplicate(format!("report `{}` given twice", dup.tag)));
    }
    let base = match baseline {
        Some(tag) => Some(
            reports
                .iter()
                .find(|r| r.tag == tag)
                .ok_or_else(|| Error::Validation(format!("baseline `{tag}` is not among the reports")))?,
        ),
        None => None,
    };
    let mut cells: BTreeMap<String, BTreeMap<Metric, ComparisonCell>> = BTreeMap::new();
    for &metric in &first.metrics {
        let values: Vec<f64> = reports.iter().map(|r| r.aggregate(metric).unwrap_or(0.0)).collect();
        let best_value = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let n_best = values.iter().filter(|&&v| v == best_value).count();
        for (r, &value) in reports.iter().zip(&values) {
            let best = reports.len() > 1 && value == best_value && n_best < reports.len();
            let significant_over_rest = best
                && n_best == 1
                && reports
                    .iter()
                    .filter(|o| o.tag != r.tag)
                    .all(|o| significantly_better(r, o, metric));
            let significant_over_baseline =
                base.is_some_and(|b| b.tag != r.tag && significantly_better(r, b, metric));
            cells.entry(r.tag.clone()).or_default().insert(
                metric,
                ComparisonCell {
                    value,
                    best,
                    significant_over_rest,
                    significant_over_baseline,
                },
            );
        }
    }
    Ok(ComparisonTable {
        metrics: first.metrics.clone(),
        methods: reports.iter().map(|r| r.tag.clone()).collect(),
        baseline: base.map(|b| b.tag.clone()),
        turn_count: turns.len(),
        cells,
    })
}
