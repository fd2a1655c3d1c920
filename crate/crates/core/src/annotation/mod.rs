//! PTKB relevance annotation from three sources (human labels, LLM
//! selection, retrieval impact) and agreement statistics between them.

mod overlap;

pub use overlap::{needs_ptkb_subset, overlap_matrix, overlap_stats, write_overlap, OverlapReport};

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{turn_metric, Metric};
use crate::exec::Execution;
use crate::llm::{parse_key_list, parse_structured_output, Gateway, ParseFailure, PromptTemplate};
use crate::model::{AnnotationSet, AnnotationSource, Conversation, PtkbSentence, Qrels, TurnContext, TurnId};
use crate::reformulation::{
    assemble_search_query, render_turn_prompt, ReformulatedQuery, Reformulator, Strategy,
};
use crate::retrieval::{Retriever, RetrieverKind};

/// Human labels as given by each turn's PTKB provenance field. Turns
/// without the field are left out.
pub fn ingest_human(conversations: &[Conversation]) -> Result<AnnotationSet> {
    let mut set = AnnotationSet::new(AnnotationSource::Human);
    for conv in conversations {
        for turn in &conv.turns {
            let Some(keys) = &turn.human_ptkb_keys else {
                continue;
            };
            if let Some(bad) = keys.iter().find(|k| !conv.ptkb.contains_key(k)) {
                return Err(Error::Validation(format!(
                    "human label for {} names unknown PTKB key `{bad}`",
                    turn.turn_id
                )));
            }
            set.selections.insert(turn.turn_id.clone(), keys.clone());
        }
    }
    Ok(set)
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LlmSelection {
    pub keys: BTreeSet<String>,
    pub flags: Vec<String>,
}

fn parse_selection(text: &str) -> std::result::Result<Vec<String>, ParseFailure> {
    match parse_structured_output(text, &["ptkb_selection"]) {
        Ok(fields) => parse_key_list(&fields["ptkb_selection"]),
        Err(e) => parse_key_list(text).map_err(|_| e),
    }
}

/// Asks the model which PTKB sentences matter for the current turn. Keys
/// outside the PTKB are dropped with a warning; an answer that never
/// parses yields an empty, flagged selection.
pub fn llm_annotate(
    ctx: &TurnContext<'_>,
    gateway: &Gateway,
    template: &PromptTemplate,
    include_responses: bool,
) -> Result<LlmSelection> {
    let full: Vec<&PtkbSentence> = ctx.ptkb().iter().collect();
    let prompt = render_turn_prompt(template, ctx, &full, &[], include_responses, &[])?;
    let reminder = "Your previous answer could not be parsed. Reply with only a JSON object with the field \"ptkb_selection\".";
    let reply = gateway.chat_parsed(prompt, reminder, parse_selection)?;
    let mut out = LlmSelection::default();
    match reply.parsed {
        Ok(keys) => {
            for k in keys {
                if ctx.ptkb().contains_key(&k) {
                    out.keys.insert(k);
                } else {
                    log::warn!("{}: model selected unknown PTKB key `{k}`", ctx.turn_id());
                    out.flags.push(format!("dropped_key:{k}"));
                }
            }
        }
        Err(e) => {
            log::warn!("{}: {e}; recording empty selection", ctx.turn_id());
            out.flags.push("parse_failure".into());
        }
    }
    Ok(out)
}

/// LLM selections for every turn, in turn order.
pub fn llm_annotate_all(
    conversations: &[Conversation],
    only: Option<&BTreeSet<TurnId>>,
    gateway: &Gateway,
    template: &PromptTemplate,
    include_responses: bool,
    exec: Execution,
    parallelism: usize,
) -> Result<(AnnotationSet, Vec<(TurnId, Vec<String>)>)> {
    let contexts: Vec<TurnContext<'_>> = conversations
        .iter()
        .flat_map(Conversation::contexts)
        .filter(|c| only.map_or(true, |o| o.contains(c.turn_id())))
        .collect();
    let results = exec.bounded(parallelism, || {
        exec.try_map(&contexts, |ctx| {
            llm_annotate(ctx, gateway, template, include_responses).map(|s| (ctx.turn_id().clone(), s))
        })
    })?;
    let mut set = AnnotationSet::new(AnnotationSource::Llm);
    let mut flags = Vec::new();
    for (turn, sel) in results {
        if !sel.flags.is_empty() {
            flags.push((turn.clone(), sel.flags));
        }
        set.selections.insert(turn, sel.keys);
    }
    Ok((set, flags))
}

/// Produces a query from a turn given a PTKB subset. Automatic annotation
/// scores each subset through this.
pub trait SubsetReformulator: Sync {
    fn reformulate_with(&self, ctx: &TurnContext<'_>, subset: &[&PtkbSentence]) -> Result<ReformulatedQuery>;
}

impl SubsetReformulator for Reformulator<'_> {
    fn reformulate_with(&self, ctx: &TurnContext<'_>, subset: &[&PtkbSentence]) -> Result<ReformulatedQuery> {
        let strategy = if subset.is_empty() {
            Strategy::None
        } else {
            Strategy::Automatic
        };
        self.reformulate_selected(ctx, subset, strategy, &[])
    }
}

/// Retrieval-impact measurement used by automatic annotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImpactSettings {
    pub metric: Metric,
    pub retriever: RetrieverKind,
    pub depth: usize,
    pub threshold: i32,
    /// Minimum gain over the baseline that counts as an improvement.
    pub epsilon: f64,
}

impl Default for ImpactSettings {
    fn default() -> Self {
        ImpactSettings {
            metric: Metric::Ndcg(3),
            retriever: RetrieverKind::Sparse,
            depth: 1000,
            threshold: 1,
            epsilon: 1e-9,
        }
    }
}

/// Effect of adding one PTKB sentence to an otherwise PTKB-free
/// reformulation. `ptkb_key` is `None` on the baseline row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactRecord {
    pub turn_id: TurnId,
    pub ptkb_key: Option<String>,
    pub baseline_metric: f64,
    pub with_sentence_metric: f64,
    pub improved: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AutomaticOutcome {
    Assessed {
        selected: BTreeSet<String>,
        records: Vec<ImpactRecord>,
    },
    /// The turn has no judgments, so impact cannot be measured.
    Unassessed,
}

/// Labels a sentence relevant iff adding it alone to the reformulation
/// strictly raises the impact metric over the no-PTKB baseline.
pub fn automatic_annotate(
    ctx: &TurnContext<'_>,
    reformulator: &dyn SubsetReformulator,
    retriever: &dyn Retriever,
    qrels: &Qrels,
    settings: &ImpactSettings,
) -> Result<AutomaticOutcome> {
    let Some(judged) = qrels.for_turn(ctx.turn_id()) else {
        return Ok(AutomaticOutcome::Unassessed);
    };
    let score = |subset: &[&PtkbSentence]| -> Result<f64> {
        let rq = reformulator.reformulate_with(ctx, subset)?;
        let query = assemble_search_query(&rq, settings.retriever);
        let ranking = retriever.search(&query, settings.depth)?;
        Ok(turn_metric(settings.metric, &ranking, judged, settings.threshold).unwrap_or(0.0))
    };
    let baseline = score(&[])?;
    let mut records = vec![ImpactRecord {
        turn_id: ctx.turn_id().clone(),
        ptkb_key: None,
        baseline_metric: baseline,
        with_sentence_metric: baseline,
        improved: false,
    }];
    let mut selected = BTreeSet::new();
    for sentence in ctx.ptkb().iter() {
        let with = score(&[sentence])?;
        let improved = with > baseline + settings.epsilon;
        if improved {
            selected.insert(sentence.key.clone());
        }
        records.push(ImpactRecord {
            turn_id: ctx.turn_id().clone(),
            ptkb_key: Some(sentence.key.clone()),
            baseline_metric: baseline,
            with_sentence_metric: with,
            improved,
        });
    }
    Ok(AutomaticOutcome::Assessed { selected, records })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutomaticAnnotation {
    pub set: AnnotationSet,
    pub records: Vec<ImpactRecord>,
    pub unassessed: Vec<TurnId>,
}

/// Automatic annotation over every turn, merged in turn order.
pub fn automatic_annotate_all(
    conversations: &[Conversation],
    reformulator: &dyn SubsetReformulator,
    retriever: &dyn Retriever,
    qrels: &Qrels,
    settings: &ImpactSettings,
    exec: Execution,
    parallelism: usize,
) -> Result<AutomaticAnnotation> {
    let contexts: Vec<TurnContext<'_>> = conversations.iter().flat_map(Conversation::contexts).collect();
    let outcomes = exec.bounded(parallelism, || {
        exec.try_map(&contexts, |ctx| {
            automatic_annotate(ctx, reformulator, retriever, qrels, settings).map(|o| (ctx.turn_id().clone(), o))
        })
    })?;
    let mut out = AutomaticAnnotation {
        set: AnnotationSet::new(AnnotationSource::Automatic),
        records: Vec::new(),
        unassessed: Vec::new(),
    };
    let mut outcomes = outcomes;
    outcomes.sort_by(|a, b| a.0.cmp(&b.0));
    for (turn, outcome) in outcomes {
        match outcome {
            AutomaticOutcome::Assessed { selected, records } => {
                out.set.selections.insert(turn, selected);
                out.records.extend(records);
            }
            AutomaticOutcome::Unassessed => out.unassessed.push(turn),
        }
    }
    Ok(out)
}

/// Audit file: `turn_id key baseline with_sentence improved`, with `-` as
/// the key of baseline rows.
pub fn write_impact_audit(records: &[ImpactRecord]) -> String {
    let mut out = String::from("turn_id\tptkb_key\tbaseline\twith_sentence\timproved\n");
    for r in records {
        let _ = writeln!(
            out,
            "{}\t{}\t{:.6}\t{:.6}\t{}",
            r.turn_id,
            r.ptkb_key.as_deref().unwrap_or("-"),
            r.baseline_metric,
            r.with_sentence_metric,
            r.improved
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{ChatBackend, ChatRequest, GatewaySettings, ResponseCache, TemplateSet};
    use crate::model::{ConversationTurn, Ptkb};
    use std::sync::Arc;

    fn conversation(n_sentences: usize, human: Option<&[&str]>) -> Conversation {
        let ptkb = Ptkb::new(
            (1..=n_sentences)
                .map(|i| PtkbSentence {
                    key: i.to_string(),
                    text: format!("sentence {i}"),
                })
                .collect(),
        )
        .unwrap();
        Conversation {
            conversation_id: "1-1".into(),
            title: "t".into(),
            ptkb,
            turns: vec![ConversationTurn {
                turn_id: "1-1-1".parse().unwrap(),
                utterance: "what should I eat?".into(),
                resolved_utterance: None,
                canonical_response: None,
                human_ptkb_keys: human.map(|h| h.iter().map(|s| s.to_string()).collect()),
            }],
        }
    }

    #[test]
    fn human_ingest() {
        let c = conversation(5, Some(&["2", "5"]));
        let set = ingest_human(std::slice::from_ref(&c)).unwrap();
        assert_eq!(set.selection(&"1-1-1".parse().unwrap()), ["2".to_string(), "5".to_string()].into());
        let empty = ingest_human(&[conversation(5, Some(&[]))]).unwrap();
        assert_eq!(empty.relevant_pair_count(), 0);
        assert_eq!(empty.selections.len(), 1);
        assert!(ingest_human(&[conversation(2, Some(&["9"]))]).is_err());
    }

    struct Fixed(&'static str);

    impl ChatBackend for Fixed {
        fn complete(&self, _: &ChatRequest) -> Result<String> {
            Ok(self.0.to_string())
        }
    }

    fn llm(answer: &'static str, n: usize) -> LlmSelection {
        let g = Gateway::new(Arc::new(Fixed(answer)), ResponseCache::in_memory(), GatewaySettings::default());
        let c = conversation(n, None);
        llm_annotate(&c.context(0), &g, &TemplateSet::builtin().select, true).unwrap()
    }

    #[test]
    fn llm_selection_parsing() {
        assert!(llm("none", 5).keys.is_empty());
        assert_eq!(llm("1,3", 5).keys, ["1".to_string(), "3".to_string()].into());
        assert_eq!(llm(r#"{"ptkb_selection": "2, 4"}"#, 5).keys.len(), 2);
        let dropped = llm("7", 3);
        assert!(dropped.keys.is_empty());
        assert_eq!(dropped.flags, ["dropped_key:7"]);
        let garbage = llm("I am not sure what you mean", 3);
        assert!(garbage.keys.is_empty());
        assert_eq!(garbage.flags, ["parse_failure"]);
    }
}
