use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use super::{AnnotationSet, AnnotationSource, Document, TurnId};
use crate::error::{Error, Result};

/// Parses a `doc_id<TAB>text` collection, one document per line.
pub fn parse_collection(document: &[u8]) -> Result<Vec<Document>> {
    let text = std::str::from_utf8(document)
        .map_err(|e| Error::parse("collection", format!("not UTF-8: {e}")))?;
    let mut docs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, body) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(format!("line {}", i + 1), "expected doc_id<TAB>text"))?;
        if id.is_empty() {
            return Err(Error::parse(format!("line {}", i + 1), "empty doc_id"));
        }
        docs.push(Document::new(id, body));
    }
    Ok(docs)
}

pub fn read_collection(path: &Path) -> Result<Vec<Document>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_collection(&bytes)
}

pub fn write_collection(docs: &[Document]) -> Vec<u8> {
    let mut out = String::new();
    for d in docs {
        let _ = writeln!(out, "{}\t{}", d.doc_id, d.text.replace(['\t', '\n'], " "));
    }
    out.into_bytes()
}

/// Parses `turn_id<TAB>source<TAB>key,key,...` lines. Every line must name
/// `source`.
pub fn parse_annotation_set(document: &[u8], source: AnnotationSource) -> Result<AnnotationSet> {
    let text = std::str::from_utf8(document)
        .map_err(|e| Error::parse("annotations", format!("not UTF-8: {e}")))?;
    let mut set = AnnotationSet::new(source);
    for (i, line) in text.lines().enumerate() {
        let loc = || format!("line {}", i + 1);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.splitn(3, '\t');
        let (Some(turn), Some(src)) = (fields.next(), fields.next()) else {
            return Err(Error::parse(loc(), "expected turn_id<TAB>source<TAB>keys"));
        };
        let keys = fields.next().unwrap_or("");
        let turn: TurnId = turn
            .parse()
            .map_err(|e: Error| Error::parse(loc(), e.to_string()))?;
        let src: AnnotationSource = src
            .parse()
            .map_err(|e: Error| Error::parse(loc(), e.to_string()))?;
        if src != source {
            return Err(Error::parse(loc(), format!("source `{src}` but expected `{source}`")));
        }
        let keys: BTreeSet<String> = keys
            .split(',')
            .map(str::trim)
            .filter(|k| !k.is_empty())
            .map(String::from)
            .collect();
        if set.selections.insert(turn.clone(), keys).is_some() {
            return Err(Error::Duplicate(format!("annotation for {turn}")));
        }
    }
    Ok(set)
}

pub fn write_annotation_set(set: &AnnotationSet) -> Vec<u8> {
    let mut out = String::new();
    for (turn, keys) in &set.selections {
        let keys: Vec<&str> = keys.iter().map(String::as_str).collect();
        let _ = writeln!(out, "{turn}\t{}\t{}", set.source, keys.join(","));
    }
    out.into_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collection_lines() {
        let docs = parse_collection(b"d1\tapple banana\n\nd2\tcherry\tpie\n").unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[1].text, "cherry\tpie");
        assert!(parse_collection(b"no tab here").is_err());
    }

    #[test]
    fn annotation_round_trip_with_empty_selection() {
        let text = b"1-1-1\tautomatic\t2,5\n1-1-2\tautomatic\t\n";
        let set = parse_annotation_set(text, AnnotationSource::Automatic).unwrap();
        assert_eq!(set.selection(&"1-1-1".parse().unwrap()).len(), 2);
        assert!(set.selection(&"1-1-2".parse().unwrap()).is_empty());
        assert_eq!(write_annotation_set(&set), text.to_vec());
        assert!(parse_annotation_set(text, AnnotationSource::Human).is_err());
    }
}
