//! Domain types and the dataset / judgment / run / annotation file formats.

mod files;
mod stats;
mod topics;
mod trec;

pub use files::{
    parse_annotation_set, parse_collection, read_collection, write_annotation_set,
    write_collection,
};
pub use stats::{dataset_stats, DatasetStats};
pub use topics::{parse_topics, write_topics};
pub use trec::{parse_qrels, parse_run, write_qrels, write_run};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Turn identifier of the form `<topic>-<conversation>-<turn>`.
///
/// Ordering is numeric per component, so `9-1-2` sorts before `9-1-10`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TurnId {
    raw: String,
    parts: [u32; 3],
}

impl TurnId {
    pub fn new(topic: u32, conversation: u32, turn: u32) -> Self {
        TurnId {
            raw: format!("{topic}-{conversation}-{turn}"),
            parts: [topic, conversation, turn],
        }
    }

    pub fn as_str(&self) -> &str {
        &self.raw
    }

    pub fn topic(&self) -> u32 {
        self.parts[0]
    }

    pub fn conversation(&self) -> u32 {
        self.parts[1]
    }

    pub fn turn(&self) -> u32 {
        self.parts[2]
    }

    /// `<topic>-<conversation>` prefix shared by all turns of a conversation.
    pub fn conversation_prefix(&self) -> String {
        format!("{}-{}", self.parts[0], self.parts[1])
    }
}

impl FromStr for TurnId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Validation(format!("turn id `{s}` is not <topic>-<conversation>-<turn>"));
        let mut parts = [0u32; 3];
        let mut it = s.split('-');
        for slot in parts.iter_mut() {
            let piece = it.next().ok_or_else(bad)?;
            if piece.is_empty() || !piece.bytes().all(|b| b.is_ascii_digit()) {
                return Err(bad());
            }
            *slot = piece.parse().map_err(|_| bad())?;
        }
        if it.next().is_some() {
            return Err(bad());
        }
        Ok(TurnId {
            raw: s.to_string(),
            parts,
        })
    }
}

impl Ord for TurnId {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.parts
            .cmp(&other.parts)
            .then_with(|| self.raw.cmp(&other.raw))
    }
}

impl PartialOrd for TurnId {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for TurnId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

impl Serialize for TurnId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.raw)
    }
}

impl<'de> Deserialize<'de> for TurnId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PtkbSentence {
    pub key: String,
    pub text: String,
}

/// A user's personal textual knowledge base, in dataset order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Ptkb {
    sentences: Vec<PtkbSentence>,
}

impl Ptkb {
    pub fn new(sentences: Vec<PtkbSentence>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for s in &sentences {
            if s.key.is_empty() {
                return Err(Error::Validation("PTKB key is empty".into()));
            }
            if s.text.trim().is_empty() {
                return Err(Error::Validation(format!("PTKB sentence `{}` is empty", s.key)));
            }
            if !seen.insert(s.key.as_str()) {
                return Err(Error::Duplicate(format!("PTKB key `{}`", s.key)));
            }
        }
        Ok(Ptkb { sentences })
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, PtkbSentence> {
        self.sentences.iter()
    }

    pub fn sentences(&self) -> &[PtkbSentence] {
        &self.sentences
    }

    pub fn get(&self, key: &str) -> Option<&PtkbSentence> {
        self.sentences.iter().find(|s| s.key == key)
    }

    pub fn contains_key(&self, key: &str) -> bool {
        self.get(key).is_some()
    }

    /// Sentences whose key is in `keys`, in PTKB order.
    pub fn subset<'a>(&'a self, keys: &BTreeSet<String>) -> Vec<&'a PtkbSentence> {
        self.sentences
            .iter()
            .filter(|s| keys.contains(&s.key))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConversationTurn {
    pub turn_id: TurnId,
    pub utterance: String,
    pub resolved_utterance: Option<String>,
    pub canonical_response: Option<String>,
    /// `None` when the source document carries no PTKB provenance field.
    pub human_ptkb_keys: Option<BTreeSet<String>>,
}

impl ConversationTurn {
    pub fn human_keys(&self) -> BTreeSet<String> {
        self.human_ptkb_keys.clone().unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conversation {
    pub conversation_id: String,
    pub title: String,
    pub ptkb: Ptkb,
    pub turns: Vec<ConversationTurn>,
}

impl Conversation {
    pub fn validate(&self) -> Result<()> {
        let mut prev: Option<u32> = None;
        for t in &self.turns {
            if t.utterance.trim().is_empty() {
                return Err(Error::Validation(format!("turn {} has an empty utterance", t.turn_id)));
            }
            if t.turn_id.conversation_prefix() != self.conversation_id {
                return Err(Error::Validation(format!(
                    "turn {} does not belong to conversation {}",
                    t.turn_id, self.conversation_id
                )));
            }
            if let Some(p) = prev {
                if t.turn_id.turn() <= p {
                    return Err(Error::Validation(format!(
                        "turn numbers not increasing at {}",
                        t.turn_id
                    )));
                }
            }
            prev = Some(t.turn_id.turn());
        }
        Ok(())
    }

    pub fn context(&self, index: usize) -> TurnContext<'_> {
        TurnContext {
            conversation: self,
            index,
        }
    }

    pub fn contexts(&self) -> impl Iterator<Item = TurnContext<'_>> {
        (0..self.turns.len()).map(move |i| self.context(i))
    }
}

/// A turn together with its conversation: history is every earlier turn.
#[derive(Debug, Clone, Copy)]
pub struct TurnContext<'a> {
    pub conversation: &'a Conversation,
    pub index: usize,
}

impl<'a> TurnContext<'a> {
    pub fn turn(&self) -> &'a ConversationTurn {
        &self.conversation.turns[self.index]
    }

    pub fn history(&self) -> &'a [ConversationTurn] {
        &self.conversation.turns[..self.index]
    }

    pub fn ptkb(&self) -> &'a Ptkb {
        &self.conversation.ptkb
    }

    pub fn turn_id(&self) -> &'a TurnId {
        &self.turn().turn_id
    }
}

/// Index from turn id to its position in a list of conversations.
pub fn turn_index(conversations: &[Conversation]) -> BTreeMap<TurnId, (usize, usize)> {
    let mut out = BTreeMap::new();
    for (ci, c) in conversations.iter().enumerate() {
        for (ti, t) in c.turns.iter().enumerate() {
            out.insert(t.turn_id.clone(), (ci, ti));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        Document {
            doc_id: doc_id.into(),
            text: text.into(),
        }
    }
}

/// Graded query-document judgments.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<TurnId, BTreeMap<String, i32>>,
}

impl Qrels {
    pub fn insert(&mut self, turn: TurnId, doc_id: impl Into<String>, grade: i32) -> Result<()> {
        let doc_id = doc_id.into();
        if grade < 0 {
            return Err(Error::Validation(format!("negative grade {grade} for ({turn}, {doc_id})")));
        }
        let per_turn = self.judgments.entry(turn.clone()).or_default();
        if per_turn.insert(doc_id.clone(), grade).is_some() {
            return Err(Error::Duplicate(format!("judgment ({turn}, {doc_id})")));
        }
        Ok(())
    }

    pub fn grade(&self, turn: &TurnId, doc_id: &str) -> Option<i32> {
        self.judgments.get(turn)?.get(doc_id).copied()
    }

    pub fn for_turn(&self, turn: &TurnId) -> Option<&BTreeMap<String, i32>> {
        self.judgments.get(turn)
    }

    pub fn turns(&self) -> impl Iterator<Item = &TurnId> {
        self.judgments.keys()
    }

    pub fn turn_count(&self) -> usize {
        self.judgments.len()
    }

    pub fn judgment_count(&self) -> usize {
        self.judgments.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.judgments.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&TurnId, &BTreeMap<String, i32>)> {
        self.judgments.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub score: f64,
}

impl ScoredDoc {
    pub fn new(doc_id: impl Into<String>, score: f64) -> Self {
        ScoredDoc {
            doc_id: doc_id.into(),
            score,
        }
    }
}

/// Descending score, ascending doc id on ties.
pub fn rank_order(a: &ScoredDoc, b: &ScoredDoc) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.doc_id.cmp(&b.doc_id))
}

/// Ranked retrieval output for a set of turns.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Run {
    pub tag: String,
    pub rankings: BTreeMap<TurnId, Vec<ScoredDoc>>,
}

impl Run {
    pub fn new(tag: impl Into<String>) -> Self {
        Run {
            tag: tag.into(),
            rankings: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (turn, docs) in &self.rankings {
            let mut seen = BTreeSet::new();
            for w in docs.windows(2) {
                if w[1].score > w[0].score {
                    return Err(Error::Validation(format!(
                        "scores increase within turn {turn} at doc {}",
                        w[1].doc_id
                    )));
                }
            }
            for d in docs {
                if !seen.insert(d.doc_id.as_str()) {
                    return Err(Error::Duplicate(format!("doc {} in turn {turn}", d.doc_id)));
                }
            }
        }
        Ok(())
    }

    /// Keeps only turns in `keep`.
    pub fn filtered(&self, keep: &BTreeSet<TurnId>) -> Run {
        Run {
            tag: self.tag.clone(),
            rankings: self
                .rankings
                .iter()
                .filter(|(t, _)| keep.contains(*t))
                .map(|(t, d)| (t.clone(), d.clone()))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationSource {
    Human,
    Automatic,
    Llm,
}

impl AnnotationSource {
    pub const ALL: [AnnotationSource; 3] = [
        AnnotationSource::Human,
        AnnotationSource::Automatic,
        AnnotationSource::Llm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AnnotationSource::Human => "human",
            AnnotationSource::Automatic => "automatic",
            AnnotationSource::Llm => "llm",
        }
    }
}

impl FromStr for AnnotationSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "human" => Ok(AnnotationSource::Human),
            "automatic" => Ok(AnnotationSource::Automatic),
            "llm" => Ok(AnnotationSource::Llm),
            other => Err(Error::Validation(format!("unknown annotation source `{other}`"))),
        }
    }
}

impl fmt::Display for AnnotationSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-turn PTKB selections from one annotation source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationSet {
    pub source: AnnotationSource,
    pub selections: BTreeMap<TurnId, BTreeSet<String>>,
}

impl AnnotationSet {
    pub fn new(source: AnnotationSource) -> Self {
        AnnotationSet {
            source,
            selections: BTreeMap::new(),
        }
    }

    /// Selection for a turn; a missing turn is an empty selection.
    pub fn selection(&self, turn: &TurnId) -> BTreeSet<String> {
        self.selections.get(turn).cloned().unwrap_or_default()
    }

    pub fn relevant_pair_count(&self) -> usize {
        self.selections.values().map(BTreeSet::len).sum()
    }

    /// Checks every selected key against its conversation's PTKB.
    pub fn validate(&self, conversations: &[Conversation]) -> Result<()> {
        let index = turn_index(conversations);
        for (turn, keys) in &self.selections {
            let Some(&(ci, _)) = index.get(turn) else {
                return Err(Error::Validation(format!(
                    "{} annotation references unknown turn {turn}",
                    self.source
                )));
            };
            let ptkb = &conversations[ci].ptkb;
            if let Some(bad) = keys.iter().find(|k| !ptkb.contains_key(k)) {
                return Err(Error::Validation(format!(
                    "{} annotation for {turn} selects unknown PTKB key `{bad}`",
                    self.source
                )));
            }
        }
        Ok(())
    }
}
