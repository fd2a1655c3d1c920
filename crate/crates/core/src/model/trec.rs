use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{Qrels, Run, ScoredDoc, TurnId};
use crate::error::{Error, Result};

fn lines(document: &[u8]) -> Result<impl Iterator<Item = (usize, &str)>> {
    let text = std::str::from_utf8(document)
        .map_err(|e| Error::parse("input", format!("not UTF-8: {e}")))?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#')))
}

/// Parses TREC qrels: `turn_id <iteration> doc_id grade`.
pub fn parse_qrels(document: &[u8]) -> Result<Qrels> {
    let mut qrels = Qrels::default();
    for (no, line) in lines(document)? {
        let loc = || format!("line {no}");
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::parse(loc(), format!("expected 4 fields, found {}", fields.len())));
        }
        let turn: TurnId = fields[0]
            .parse()
            .map_err(|e: Error| Error::parse(loc(), e.to_string()))?;
        let grade: i32 = fields[3]
            .parse()
            .map_err(|_| Error::parse(loc(), format!("grade `{}` is not an integer", fields[3])))?;
        qrels
            .insert(turn, fields[2], grade)
            .map_err(|e| Error::parse(loc(), e.to_string()))?;
    }
    Ok(qrels)
}

pub fn write_qrels(qrels: &Qrels) -> Vec<u8> {
    let mut out = String::new();
    for (turn, docs) in qrels.iter() {
        for (doc, grade) in docs {
            let _ = writeln!(out, "{turn} 0 {doc} {grade}");
        }
    }
    out.into_bytes()
}

/// Writes a TREC run (`turn_id Q0 doc_id rank score tag`), keeping at most
/// `depth` documents per turn. Scores use the shortest round-trip form.
pub fn write_run(run: &Run, depth: usize) -> Vec<u8> {
    let mut out = String::new();
    for (turn, docs) in &run.rankings {
        for (i, d) in docs.iter().take(depth).enumerate() {
            let _ = writeln!(out, "{turn} Q0 {} {} {} {}", d.doc_id, i + 1, d.score, run.tag);
        }
    }
    out.into_bytes()
}

pub fn parse_run(document: &[u8]) -> Result<Run> {
    let mut tag: Option<String> = None;
    let mut rankings: BTreeMap<TurnId, Vec<ScoredDoc>> = BTreeMap::new();
    let mut last_rank: BTreeMap<TurnId, u64> = BTreeMap::new();
    for (no, line) in lines(document)? {
        let loc = || format!("line {no}");
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(Error::parse(loc(), format!("expected 6 fields, found {}", fields.len())));
        }
        let turn: TurnId = fields[0]
            .parse()
            .map_err(|e: Error| Error::parse(loc(), e.to_string()))?;
        let rank: u64 = fields[3]
            .parse()
            .map_err(|_| Error::parse(loc(), format!("rank `{}` is not an integer", fields[3])))?;
        let score: f64 = fields[4]
            .parse()
            .map_err(|_| Error::parse(loc(), format!("score `{}` is not a number", fields[4])))?;
        if !score.is_finite() {
            return Err(Error::parse(loc(), "score is not finite"));
        }
        match &tag {
            None => tag = Some(fields[5].to_string()),
            Some(t) if t != fields[5] => {
                return Err(Error::Validation(format!(
                    "line {no}: tag `{}` differs from `{t}`",
                    fields[5]
                )))
            }
            Some(_) => {}
        }

        let prev = last_rank.get(&turn).copied().unwrap_or(0);
        if rank == 0 || rank <= prev {
            return Err(Error::Validation(format!(
                "line {no}: rank {rank} does not follow rank {prev} for {turn}"
            )));
        }
        last_rank.insert(turn.clone(), rank);
        let docs = rankings.entry(turn.clone()).or_default();
        if let Some(last) = docs.last() {
            if score > last.score {
                return Err(Error::Validation(format!(
                    "line {no}: score {score} exceeds previous score {} for {turn}",
                    last.score
                )));
            }
        }
        if docs.iter().any(|d| d.doc_id == fields[2]) {
            return Err(Error::Duplicate(format!("doc {} in turn {turn}", fields[2])));
        }
        docs.push(ScoredDoc::new(fields[2], score));
    }
    Ok(Run {
        tag: tag.unwrap_or_default(),
        rankings,
    })
}
