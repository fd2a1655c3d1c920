use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use super::Demonstration;
use crate::model::{ConversationTurn, PtkbSentence, TurnContext};

/// `[key] sentence` per line, or `(none)`.
pub fn render_ptkb(sentences: &[&PtkbSentence]) -> String {
    if sentences.is_empty() {
        return "(none)".into();
    }
    let mut out = String::new();
    for s in sentences {
        let _ = writeln!(out, "[{}] {}", s.key, s.text.trim());
    }
    out.truncate(out.trim_end().len());
    out
}

/// Prior turns as `Q<i>:` lines, each followed by `A<i>:` when the dataset
/// carries a response and `include_responses` is set.
pub fn render_history(history: &[ConversationTurn], include_responses: bool) -> String {
    if history.is_empty() {
        return "(start of conversation)".into();
    }
    let mut out = String::new();
    for (i, t) in history.iter().enumerate() {
        let _ = writeln!(out, "Q{}: {}", i + 1, t.utterance.trim());
        if include_responses {
            if let Some(r) = t.canonical_response.as_deref().filter(|r| !r.trim().is_empty()) {
                let _ = writeln!(out, "A{}: {}", i + 1, r.trim());
            }
        }
    }
    out.truncate(out.trim_end().len());
    out
}

pub fn render_keys(keys: &BTreeSet<String>) -> String {
    if keys.is_empty() {
        "none".into()
    } else {
        keys.iter().cloned().collect::<Vec<_>>().join(",")
    }
}

/// Escapes text for placement inside a JSON string literal in a template.
fn json_inner(text: &str) -> String {
    let quoted = serde_json::to_string(text).expect("strings serialize");
    quoted[1..quoted.len() - 1].to_string()
}

pub fn input_slots(ctx: &TurnContext<'_>, ptkb: &[&PtkbSentence], include_responses: bool) -> HashMap<String, String> {
    HashMap::from([
        ("ptkb".to_string(), render_ptkb(ptkb)),
        ("history".to_string(), render_history(ctx.history(), include_responses)),
        ("utterance".to_string(), ctx.turn().utterance.trim().to_string()),
    ])
}

pub fn demo_slots(demos: &[Demonstration]) -> Vec<HashMap<String, String>> {
    demos
        .iter()
        .map(|d| {
            HashMap::from([
                ("demo_ptkb".to_string(), d.ptkb.clone()),
                ("demo_history".to_string(), d.history.clone()),
                ("demo_utterance".to_string(), d.utterance.clone()),
                ("demo_selection".to_string(), json_inner(&render_keys(&d.selected_keys))),
                ("demo_rewrite".to_string(), json_inner(&d.gold_rewrite)),
                ("demo_response".to_string(), json_inner(&d.gold_response)),
            ])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn turn(id: &str, u: &str, r: Option<&str>) -> ConversationTurn {
        ConversationTurn {
            turn_id: id.parse().unwrap(),
            utterance: u.into(),
            resolved_utterance: None,
            canonical_response: r.map(String::from),
            human_ptkb_keys: None,
        }
    }

    #[test]
    fn history_lines() {
        let h = vec![turn("1-1-1", "first?", Some("yes")), turn("1-1-2", "second?", None)];
        assert_eq!(render_history(&h, true), "Q1: first?\nA1: yes\nQ2: second?");
        assert_eq!(render_history(&h, false), "Q1: first?\nQ2: second?");
        assert_eq!(render_history(&[], true), "(start of conversation)");
    }

    #[test]
    fn ptkb_lines() {
        let s = PtkbSentence { key: "2".into(), text: "I like tea. ".into() };
        assert_eq!(render_ptkb(&[&s]), "[2] I like tea.");
        assert_eq!(render_ptkb(&[]), "(none)");
    }

    #[test]
    fn json_escape_for_demo_fields() {
        assert_eq!(json_inner("say \"hi\"\n"), "say \\\"hi\\\"\\n");
    }
}
