//! LLM query reformulation under every PTKB strategy, few-shot
//! demonstrations, and final search-query assembly.

mod prompt;

pub use prompt::{render_history, render_keys, render_ptkb};

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::llm::{parse_key_list, parse_structured_output, render_prompt, Gateway, PromptTemplate, TemplateSet};
use crate::model::{AnnotationSet, AnnotationSource, Conversation, PtkbSentence, TurnContext, TurnId};
use crate::retrieval::RetrieverKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    None,
    All,
    Human,
    Automatic,
    Llm,
    Str,
    Sar,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::None,
        Strategy::All,
        Strategy::Human,
        Strategy::Automatic,
        Strategy::Llm,
        Strategy::Str,
        Strategy::Sar,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::None => "none",
            Strategy::All => "all",
            Strategy::Human => "human",
            Strategy::Automatic => "automatic",
            Strategy::Llm => "llm",
            Strategy::Str => "str",
            Strategy::Sar => "sar",
        }
    }

    /// Annotation source whose selections this strategy feeds to the model.
    pub fn annotation_source(self) -> Option<AnnotationSource> {
        match self {
            Strategy::Human => Some(AnnotationSource::Human),
            Strategy::Automatic => Some(AnnotationSource::Automatic),
            Strategy::Llm => Some(AnnotationSource::Llm),
            _ => None,
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Validation(format!("unknown strategy `{s}`")))
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReformulatedQuery {
    pub turn_id: TurnId,
    pub strategy: Strategy,
    pub shots: usize,
    pub rewrite: String,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_keys: Option<BTreeSet<String>>,
    #[serde(default)]
    pub flags: Vec<String>,
}

/// Search string for a retriever: rewrite plus response for sparse
/// retrieval, rewrite alone for dense retrieval.
pub fn assemble_search_query(rq: &ReformulatedQuery, kind: RetrieverKind) -> String {
    let rewrite = rq.rewrite.trim();
    match kind {
        RetrieverKind::Dense => rewrite.to_string(),
        RetrieverKind::Sparse => {
            let response = rq.response.trim();
            if response.is_empty() {
                rewrite.to_string()
            } else if rewrite.is_empty() {
                response.to_string()
            } else {
                format!("{rewrite} {response}")
            }
        }
    }
}

/// One in-context example, drawn from the training split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub turn_id: TurnId,
    /// Rendered PTKB of the example conversation.
    pub ptkb: String,
    /// Rendered history preceding the example turn.
    pub history: String,
    pub utterance: String,
    pub selected_keys: BTreeSet<String>,
    pub gold_rewrite: String,
    pub gold_response: String,
}

/// Samples `k` demonstrations uniformly without replacement from annotated
/// training turns that have a gold rewrite. The pool is ordered by turn id
/// before sampling, so a seed fixes the result.
pub fn build_demonstrations(
    train: &[Conversation],
    annotations: &AnnotationSet,
    k: usize,
    seed: u64,
    include_responses: bool,
) -> Result<Vec<Demonstration>> {
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut pool: Vec<TurnContext<'_>> = train
        .iter()
        .flat_map(Conversation::contexts)
        .filter(|ctx| annotations.selections.contains_key(ctx.turn_id()))
        .filter(|ctx| ctx.turn().resolved_utterance.as_deref().is_some_and(|r| !r.trim().is_empty()))
        .collect();
    pool.sort_by(|a, b| a.turn_id().cmp(b.turn_id()));
    if k > pool.len() {
        return Err(Error::Validation(format!(
            "{k} demonstrations requested but only {} annotated training turns are available",
            pool.len()
        )));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let picked = rand::seq::index::sample(&mut rng, pool.len(), k);
    Ok(picked
        .into_iter()
        .map(|i| {
            let ctx = pool[i];
            let turn = ctx.turn();
            let keys = annotations.selection(ctx.turn_id());
            let all: Vec<&PtkbSentence> = ctx.ptkb().iter().collect();
            Demonstration {
                turn_id: turn.turn_id.clone(),
                ptkb: render_ptkb(&all),
                history: render_history(ctx.history(), include_responses),
                utterance: turn.utterance.trim().to_string(),
                selected_keys: keys,
                gold_rewrite: turn.resolved_utterance.clone().unwrap_or_default().trim().to_string(),
                gold_response: turn.canonical_response.clone().unwrap_or_default().trim().to_string(),
            }
        })
        .collect())
}

/// Renders `template` for one turn: demonstrations expanded, then the
/// PTKB subset, history, utterance, and any `extra` slots filled in.
pub fn render_turn_prompt(
    template: &PromptTemplate,
    ctx: &TurnContext<'_>,
    ptkb: &[&PtkbSentence],
    demos: &[Demonstration],
    include_responses: bool,
    extra: &[(&str, &str)],
) -> Result<String> {
    let expanded = template.with_demonstrations(&prompt::demo_slots(demos))?;
    let mut slots = prompt::input_slots(ctx, ptkb, include_responses);
    for (k, v) in extra {
        slots.insert(k.to_string(), v.to_string());
    }
    render_prompt(&expanded, &slots)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReformulationOptions {
    /// Show prior canonical responses in the rendered history.
    pub include_responses: bool,
}

impl Default for ReformulationOptions {
    fn default() -> Self {
        ReformulationOptions {
            include_responses: true,
        }
    }
}

/// Reformulates turns through a [`Gateway`] with a fixed template set.
pub struct Reformulator<'a> {
    pub gateway: &'a Gateway,
    pub templates: &'a TemplateSet,
    pub options: ReformulationOptions,
}

/// Splits model-selected keys into those present in the PTKB and the rest.
fn validate_keys(ctx: &TurnContext<'_>, keys: Vec<String>) -> (BTreeSet<String>, Vec<String>) {
    let (valid, invalid): (Vec<String>, Vec<String>) =
        keys.into_iter().partition(|k| ctx.ptkb().contains_key(k));
    (valid.into_iter().collect(), invalid)
}

impl<'a> Reformulator<'a> {
    pub fn new(gateway: &'a Gateway, templates: &'a TemplateSet) -> Self {
        Reformulator {
            gateway,
            templates,
            options: ReformulationOptions::default(),
        }
    }

    fn prompt(
        &self,
        template: &PromptTemplate,
        ctx: &TurnContext<'_>,
        ptkb: &[&PtkbSentence],
        demos: &[Demonstration],
        extra: &[(&str, &str)],
    ) -> Result<String> {
        render_turn_prompt(template, ctx, ptkb, demos, self.options.include_responses, extra)
    }

    fn base(&self, ctx: &TurnContext<'_>, strategy: Strategy, shots: usize) -> ReformulatedQuery {
        ReformulatedQuery {
            turn_id: ctx.turn_id().clone(),
            strategy,
            shots,
            rewrite: ctx.turn().utterance.trim().to_string(),
            response: String::new(),
            selected_keys: None,
            flags: Vec::new(),
        }
    }

    fn record_selection(rq: &mut ReformulatedQuery, ctx: &TurnContext<'_>, raw: Option<&str>) {
        let Some(raw) = raw else {
            rq.selected_keys = Some(BTreeSet::new());
            rq.flags.push("selection_missing".into());
            return;
        };
        match parse_key_list(raw) {
            Ok(keys) => {
                let (valid, invalid) = validate_keys(ctx, keys);
                if !invalid.is_empty() {
                    log::warn!("{}: dropping unknown PTKB keys {invalid:?}", rq.turn_id);
                    rq.flags.push(format!("dropped_keys:{}", invalid.join(",")));
                }
                rq.selected_keys = Some(valid);
            }
            Err(_) => {
                rq.selected_keys = Some(BTreeSet::new());
                rq.flags.push("selection_unparseable".into());
            }
        }
    }

    fn apply_rewrite(rq: &mut ReformulatedQuery, rewrite: &str) {
        if rewrite.trim().is_empty() {
            rq.flags.push("empty_rewrite".into());
        } else {
            rq.rewrite = rewrite.trim().to_string();
        }
    }

    /// One call with a given PTKB subset: none, all, or an annotated
    /// selection. On an unparseable answer the raw utterance is kept.
    pub fn reformulate_selected(
        &self,
        ctx: &TurnContext<'_>,
        subset: &[&PtkbSentence],
        strategy: Strategy,
        demos: &[Demonstration],
    ) -> Result<ReformulatedQuery> {
        let mut rq = self.base(ctx, strategy, demos.len());
        if strategy.annotation_source().is_some() {
            rq.selected_keys = Some(subset.iter().map(|s| s.key.clone()).collect());
        }
        let prompt = self.prompt(&self.templates.reformulate, ctx, subset, demos, &[])?;
        let reply = self.gateway.chat_structured(prompt, &["rewrite", "response"])?;
        match reply.parsed {
            Ok(fields) => {
                Self::apply_rewrite(&mut rq, &fields["rewrite"]);
                rq.response = fields["response"].trim().to_string();
            }
            Err(e) => {
                log::warn!("{}: {e}; keeping raw utterance", rq.turn_id);
                rq.flags.push("parse_failure".into());
            }
        }
        Ok(rq)
    }

    /// Select-then-reformulate: a hypothetical response from the whole PTKB,
    /// then a rewrite conditioned on that response.
    pub fn str_reformulate(&self, ctx: &TurnContext<'_>, demos: &[Demonstration]) -> Result<ReformulatedQuery> {
        let full: Vec<&PtkbSentence> = ctx.ptkb().iter().collect();
        let stage1 = self.prompt(&self.templates.str_response, ctx, &full, demos, &[])?;
        let reply = self.gateway.chat_structured(stage1, &["response"])?;
        let hypothetical = match reply.parsed {
            Ok(fields) => fields["response"].trim().to_string(),
            Err(e) => {
                log::warn!("{}: STR stage 1 failed ({e}); falling back to full PTKB", ctx.turn_id());
                let mut rq = self.reformulate_selected(ctx, &full, Strategy::Str, demos)?;
                rq.flags.push("str_stage1_fallback".into());
                return Ok(rq);
            }
        };
        let mut rq = self.base(ctx, Strategy::Str, demos.len());
        let selection = parse_structured_output(&reply.text, &["ptkb_selection"]).ok();
        Self::record_selection(&mut rq, ctx, selection.as_ref().map(|f| f["ptkb_selection"].as_str()));

        let stage2 = self.prompt(
            &self.templates.str_rewrite,
            ctx,
            &full,
            demos,
            &[("hypothetical_response", &hypothetical)],
        )?;
        let reply = self.gateway.chat_structured(stage2, &["rewrite"])?;
        match reply.parsed {
            Ok(fields) => Self::apply_rewrite(&mut rq, &fields["rewrite"]),
            Err(_) => rq.flags.push("str_stage2_parse_failure".into()),
        }
        rq.response = hypothetical;
        Ok(rq)
    }

    /// Select-and-reformulate: selection, rewrite, and response in one call.
    pub fn sar_reformulate(&self, ctx: &TurnContext<'_>, demos: &[Demonstration]) -> Result<ReformulatedQuery> {
        let full: Vec<&PtkbSentence> = ctx.ptkb().iter().collect();
        let prompt = self.prompt(&self.templates.sar, ctx, &full, demos, &[])?;
        let reply = self.gateway.chat_structured(prompt, &["rewrite", "response"])?;
        let mut rq = self.base(ctx, Strategy::Sar, demos.len());
        match reply.parsed {
            Ok(fields) => {
                Self::apply_rewrite(&mut rq, &fields["rewrite"]);
                rq.response = fields["response"].trim().to_string();
                let selection = parse_structured_output(&reply.text, &["ptkb_selection"]).ok();
                Self::record_selection(&mut rq, ctx, selection.as_ref().map(|f| f["ptkb_selection"].as_str()));
            }
            Err(e) => {
                log::warn!("{}: {e}; keeping raw utterance", rq.turn_id);
                rq.flags.push("parse_failure".into());
            }
        }
        Ok(rq)
    }

    /// Dispatches on `strategy`. Annotation-backed strategies need the
    /// matching [`AnnotationSet`].
    pub fn reformulate(
        &self,
        ctx: &TurnContext<'_>,
        strategy: Strategy,
        annotations: Option<&AnnotationSet>,
        demos: &[Demonstration],
    ) -> Result<ReformulatedQuery> {
        match strategy {
            Strategy::None => self.reformulate_selected(ctx, &[], strategy, demos),
            Strategy::All => {
                let full: Vec<&PtkbSentence> = ctx.ptkb().iter().collect();
                self.reformulate_selected(ctx, &full, strategy, demos)
            }
            Strategy::Human | Strategy::Automatic | Strategy::Llm => {
                let source = strategy.annotation_source().expect("annotated strategy");
                let set = annotations.filter(|a| a.source == source).ok_or_else(|| {
                    Error::Validation(format!("strategy `{strategy}` needs {source} annotations"))
                })?;
                let subset = ctx.ptkb().subset(&set.selection(ctx.turn_id()));
                self.reformulate_selected(ctx, &subset, strategy, demos)
            }
            Strategy::Str => self.str_reformulate(ctx, demos),
            Strategy::Sar => self.sar_reformulate(ctx, demos),
        }
    }

    /// Reformulates every turn of `conversations` (restricted to `only` when
    /// given), returning results in turn order.
    pub fn reformulate_all(
        &self,
        conversations: &[Conversation],
        only: Option<&BTreeSet<TurnId>>,
        strategy: Strategy,
        annotations: Option<&AnnotationSet>,
        demos: &[Demonstration],
        exec: Execution,
        parallelism: usize,
    ) -> Result<Vec<ReformulatedQuery>> {
        let contexts: Vec<TurnContext<'_>> = conversations
            .iter()
            .flat_map(Conversation::contexts)
            .filter(|c| only.map_or(true, |o| o.contains(c.turn_id())))
            .collect();
        let mut out = exec.bounded(parallelism, || {
            exec.try_map(&contexts, |ctx| self.reformulate(ctx, strategy, annotations, demos))
        })?;
        out.sort_by(|a, b| a.turn_id.cmp(&b.turn_id));
        Ok(out)
    }
}

/// One JSON record per line.
pub fn write_reformulations(records: &[ReformulatedQuery]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        out.extend(serde_json::to_vec(r).expect("record serializes"));
        out.push(b'\n');
    }
    out
}

pub fn parse_reformulations(document: &[u8]) -> Result<Vec<ReformulatedQuery>> {
    let text = std::str::from_utf8(document)
        .map_err(|e| Error::parse("reformulations", format!("not UTF-8: {e}")))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::parse(format!("line {}", i + 1), e.to_string()))
        })
        .collect()
}
