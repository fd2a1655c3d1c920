use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::model::{AnnotationSet, AnnotationSource, TurnId};

/// Agreement between two annotation sources over a fixed turn set. A turn
/// missing from a set counts as an empty selection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub first: AnnotationSource,
    pub second: AnnotationSource,
    pub turns: usize,
    /// Turns where both selections are identical.
    pub exact_matches: usize,
    /// (turn, key) pairs selected by both.
    pub shared_keys: usize,
    /// (turn, key) pairs selected by either.
    pub union_keys: usize,
    pub first_only_keys: usize,
    pub second_only_keys: usize,
    /// Turns where a source selected nothing.
    pub first_no_ptkb: usize,
    pub second_no_ptkb: usize,
    pub both_no_ptkb: usize,
}

impl OverlapReport {
    pub fn exact_match_rate(&self) -> f64 {
        if self.turns == 0 {
            0.0
        } else {
            self.exact_matches as f64 / self.turns as f64
        }
    }

    /// The same report with the two sources swapped.
    pub fn swapped(&self) -> OverlapReport {
        OverlapReport {
            first: self.second,
            second: self.first,
            first_only_keys: self.second_only_keys,
            second_only_keys: self.first_only_keys,
            first_no_ptkb: self.second_no_ptkb,
            second_no_ptkb: self.first_no_ptkb,
            ..self.clone()
        }
    }
}

pub fn overlap_stats(a: &AnnotationSet, b: &AnnotationSet, turns: &BTreeSet<TurnId>) -> OverlapReport {
    let mut r = OverlapReport {
        first: a.source,
        second: b.source,
        turns: turns.len(),
        exact_matches: 0,
        shared_keys: 0,
        union_keys: 0,
        first_only_keys: 0,
        second_only_keys: 0,
        first_no_ptkb: 0,
        second_no_ptkb: 0,
        both_no_ptkb: 0,
    };
    for t in turns {
        let sa = a.selection(t);
        let sb = b.selection(t);
        if sa == sb {
            r.exact_matches += 1;
        }
        r.shared_keys += sa.intersection(&sb).count();
        r.union_keys += sa.union(&sb).count();
        r.first_only_keys += sa.difference(&sb).count();
        r.second_only_keys += sb.difference(&sa).count();
        r.first_no_ptkb += usize::from(sa.is_empty());
        r.second_no_ptkb += usize::from(sb.is_empty());
        r.both_no_ptkb += usize::from(sa.is_empty() && sb.is_empty());
    }
    r
}

/// Reports for every unordered pair of `sets`, in input order.
pub fn overlap_matrix(sets: &[&AnnotationSet], turns: &BTreeSet<TurnId>) -> Vec<OverlapReport> {
    let mut out = Vec::new();
    for (i, a) in sets.iter().enumerate() {
        for b in &sets[i + 1..] {
            out.push(overlap_stats(a, b, turns));
        }
    }
    out
}

pub fn write_overlap(reports: &[OverlapReport]) -> String {
    let mut out = String::from(
        "first\tsecond\tturns\texact_matches\tshared_keys\tunion_keys\tfirst_only_keys\tsecond_only_keys\tfirst_no_ptkb\tsecond_no_ptkb\tboth_no_ptkb\n",
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.first,
            r.second,
            r.turns,
            r.exact_matches,
            r.shared_keys,
            r.union_keys,
            r.first_only_keys,
            r.second_only_keys,
            r.first_no_ptkb,
            r.second_no_ptkb,
            r.both_no_ptkb
        );
    }
    out
}

/// Assessed turns where automatic annotation found at least one improving
/// sentence.
pub fn needs_ptkb_subset(automatic: &AnnotationSet, assessed: &BTreeSet<TurnId>) -> BTreeSet<TurnId> {
    automatic
        .selections
        .iter()
        .filter(|(t, keys)| !keys.is_empty() && assessed.contains(*t))
        .map(|(t, _)| t.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(source: AnnotationSource, sel: &[&[&str]]) -> AnnotationSet {
        let mut s = AnnotationSet::new(source);
        for (i, keys) in sel.iter().enumerate() {
            s.selections.insert(
                format!("1-1-{}", i + 1).parse().unwrap(),
                keys.iter().map(|k| k.to_string()).collect(),
            );
        }
        s
    }

    fn turns(n: usize) -> BTreeSet<TurnId> {
        (1..=n).map(|i| format!("1-1-{i}").parse().unwrap()).collect()
    }

    #[test]
    fn hand_counted_fixture() {
        let a = set(AnnotationSource::Human, &[&["1"], &["1", "2"], &[]]);
        let b = set(AnnotationSource::Llm, &[&["1"], &["2"], &[]]);
        let r = overlap_stats(&a, &b, &turns(3));
        assert_eq!(r.exact_matches, 2);
        assert_eq!(r.shared_keys, 2);
        assert_eq!(r.first_only_keys, 1);
        assert_eq!(r.second_only_keys, 0);
        assert_eq!(r.both_no_ptkb, 1);
        assert_eq!(overlap_stats(&b, &a, &turns(3)), r.swapped());
    }

    #[test]
    fn identity_and_empty() {
        let a = set(AnnotationSource::Human, &[&["1"], &["2"], &[], &["3"]]);
        assert_eq!(overlap_stats(&a, &a, &turns(4)).exact_match_rate(), 1.0);
        let empty = AnnotationSet::new(AnnotationSource::Automatic);
        assert_eq!(overlap_stats(&empty, &a, &turns(4)).exact_matches, 4 - 3);
        assert!(needs_ptkb_subset(&empty, &turns(4)).is_empty());
        assert_eq!(needs_ptkb_subset(&a, &turns(4)).len(), 3);
        assert_eq!(needs_ptkb_subset(&a, &turns(1)).len(), 1);
    }
}
