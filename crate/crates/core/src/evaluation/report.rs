//! Tab-separated report writers.

use std::fmt::Write as _;

use super::{ComparisonTable, MetricReport};

/// Per-turn rows `turn metric value`, then aggregate rows with `all` in the
/// turn column and the value ×100 at two decimals.
pub fn write_report(report: &MetricReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "turn_id\tmetric\tvalue");
    for (turn, values) in &report.per_turn {
        for m in &report.metrics {
            if let Some(v) = values.get(m) {
                let _ = writeln!(out, "{turn}\t{m}\t{v:.6}");
            }
        }
    }
    for m in &report.metrics {
        let _ = writeln!(out, "all\t{m}\t{:.2}", report.aggregates.get(m).copied().unwrap_or(0.0));
    }
    let _ = writeln!(out, "all\tevaluated_turns\t{}", report.evaluated_turn_count);
    out
}

/// Method × metric table. Cells are the ×100 value followed by `*` for the
/// column best, `†` when the best is significantly better than every other
/// method, and `^` when significantly better than the baseline.
pub fn write_comparison(table: &ComparisonTable) -> String {
    let mut out = String::from("method");
    for m in &table.metrics {
        let _ = write!(out, "\t{m}");
    }
    out.push('\n');
    for method in &table.methods {
        out.push_str(method);
        for m in &table.metrics {
            let cell = &table.cells[method][m];
            let _ = write!(out, "\t{:.2}", cell.value);
            if cell.best {
                out.push('*');
            }
            if cell.significant_over_rest {
                out.push('†');
            }
            if cell.significant_over_baseline {
                out.push('^');
            }
        }
        out.push('\n');
    }
    out
}

/// Long-format aggregates for external plotting: `group method metric value`.
pub fn write_plot_data(groups: &[(&str, &ComparisonTable)]) -> String {
    let mut out = String::from("group\tmethod\tmetric\tvalue\n");
    for (group, table) in groups {
        for method in &table.methods {
            for m in &table.metrics {
                let _ = writeln!(out, "{group}\t{method}\t{m}\t{:.2}", table.cells[method][m].value);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{compare_methods, evaluate_run, MetricConfig};
    use crate::exec::Execution;
    use crate::model::{Qrels, Run, ScoredDoc};

    #[test]
    fn report_layout() {
        let mut q = Qrels::default();
        q.insert("1-1-1".parse().unwrap(), "a", 1).unwrap();
        let mut r = Run::new("t");
        r.rankings.insert("1-1-1".parse().unwrap(), vec![ScoredDoc::new("x", 2.0), ScoredDoc::new("a", 1.0)]);
        let rep = evaluate_run(&r, &q, &MetricConfig::default(), None, Execution::Sequential).unwrap();
        let text = write_report(&rep);
        assert!(text.contains("1-1-1\tmrr\t0.500000\n"));
        assert!(text.contains("all\tmrr\t50.00\n"));
        let table = compare_methods(&[rep], None).unwrap();
        assert_eq!(write_comparison(&table), "method\tmrr\tndcg@3\tndcg@5\tmap\nt\t50.00\t63.09\t63.09\t50.00\n");
        assert!(write_plot_data(&[("sparse", &table)]).contains("sparse\tt\tmap\t50.00\n"));
    }
}
