use std::collections::BTreeSet;

use serde::Serialize;

use super::{Conversation, Qrels};

/// Dataset counts in the layout of the usual split-statistics table.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DatasetStats {
    pub topics: usize,
    pub conversations: usize,
    pub turns: usize,
    /// Distinct turn ids with at least one query-document judgment.
    pub assessed_turns: usize,
    pub ptkb_sentences: usize,
    /// Turns carrying a PTKB provenance field.
    pub ptkb_assessed_turns: usize,
    /// Sentence-level judgments: PTKB size summed over PTKB-assessed turns.
    pub ptkb_assessments: usize,
    /// Human-labeled relevant (turn, sentence) pairs.
    pub relevant_ptkb: usize,
}

pub fn dataset_stats(conversations: &[Conversation], qrels: Option<&Qrels>) -> DatasetStats {
    let topics: BTreeSet<u32> = conversations
        .iter()
        .flat_map(|c| c.turns.iter().map(|t| t.turn_id.topic()))
        .collect();
    let mut stats = DatasetStats {
        topics: topics.len(),
        conversations: conversations.len(),
        assessed_turns: qrels.map_or(0, Qrels::turn_count),
        ..DatasetStats::default()
    };
    for c in conversations {
        stats.turns += c.turns.len();
        stats.ptkb_sentences += c.ptkb.len();
        for t in &c.turns {
            if let Some(keys) = &t.human_ptkb_keys {
                stats.ptkb_assessed_turns += 1;
                stats.ptkb_assessments += c.ptkb.len();
                stats.relevant_ptkb += keys.len();
            }
        }
    }
    stats
}

impl DatasetStats {
    pub fn to_tsv(&self) -> String {
        [
            ("topics", self.topics),
            ("conversations", self.conversations),
            ("turns", self.turns),
            ("assessed_turns", self.assessed_turns),
            ("ptkb_sentences", self.ptkb_sentences),
            ("ptkb_assessed_turns", self.ptkb_assessed_turns),
            ("ptkb_assessments", self.ptkb_assessments),
            ("relevant_ptkb", self.relevant_ptkb),
        ]
        .iter()
        .map(|(k, v)| format!("{k}\t{v}\n"))
        .collect()
    }
}
