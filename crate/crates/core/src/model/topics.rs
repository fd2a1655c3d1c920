use std::collections::{BTreeSet, HashSet};

use serde_json::{json, Map, Value};

use super::{Conversation, ConversationTurn, Ptkb, PtkbSentence, TurnId};
use crate::error::{Error, Result};

/// Parses a topics document: a JSON list of conversations, each carrying its
/// PTKB (`"ptkb"`: key → sentence, order preserved) and ordered `"turns"`.
pub fn parse_topics(document: &[u8]) -> Result<Vec<Conversation>> {
    let root: Value = serde_json::from_slice(document)
        .map_err(|e| Error::parse("$", format!("invalid JSON: {e}")))?;
    let list = root
        .as_array()
        .ok_or_else(|| Error::parse("$", "expected a list of conversations"))?;

    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(list.len());
    for (ci, conv) in list.iter().enumerate() {
        let path = format!("$[{ci}]");
        let conversation = parse_conversation(conv, &path)?;
        for t in &conversation.turns {
            if !seen.insert(t.turn_id.clone()) {
                return Err(Error::Duplicate(format!("turn_id {}", t.turn_id)));
            }
        }
        conversation.validate()?;
        out.push(conversation);
    }
    Ok(out)
}

fn parse_conversation(v: &Value, path: &str) -> Result<Conversation> {
    let obj = v
        .as_object()
        .ok_or_else(|| Error::parse(path, "expected an object"))?;
    let number = scalar_string(obj.get("number"), &format!("{path}.number"))?;
    let title = match obj.get("title") {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(Error::parse(format!("{path}.title"), "expected a string")),
    };

    let ptkb_path = format!("{path}.ptkb");
    let ptkb = match obj.get("ptkb") {
        None | Some(Value::Null) => Ptkb::default(),
        Some(Value::Object(map)) => {
            let mut sentences = Vec::with_capacity(map.len());
            for (key, text) in map {
                let text = text.as_str().ok_or_else(|| {
                    Error::parse(format!("{ptkb_path}.{key}"), "expected a string")
                })?;
                sentences.push(PtkbSentence {
                    key: key.clone(),
                    text: text.to_string(),
                });
            }
            Ptkb::new(sentences)?
        }
        Some(_) => return Err(Error::parse(ptkb_path, "expected a key → sentence map")),
    };

    let turns_path = format!("{path}.turns");
    let turns_v = obj
        .get("turns")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::parse(&turns_path, "expected a list of turns"))?;

    let conversation_id = if number.matches('-').count() == 1 {
        number.clone()
    } else {
        // Some dumps give a bare topic number; recover the prefix from turn ids.
        turns_v
            .first()
            .and_then(|t| t.get("turn_id"))
            .and_then(Value::as_str)
            .and_then(|s| s.parse::<TurnId>().ok())
            .map(|t| t.conversation_prefix())
            .ok_or_else(|| {
                Error::parse(format!("{path}.number"), "expected `<topic>-<conversation>`")
            })?
    };

    let mut turns = Vec::with_capacity(turns_v.len());
    for (ti, t) in turns_v.iter().enumerate() {
        turns.push(parse_turn(t, &format!("{turns_path}[{ti}]"), &conversation_id)?);
    }

    Ok(Conversation {
        conversation_id,
        title,
        ptkb,
        turns,
    })
}

fn parse_turn(v: &Value, path: &str, conversation_id: &str) -> Result<ConversationTurn> {
    let obj = v
        .as_object()
        .ok_or_else(|| Error::parse(path, "expected an object"))?;
    let id_field = obj.get("turn_id").or_else(|| obj.get("number"));
    let raw = scalar_string(id_field, &format!("{path}.turn_id"))?;
    let full = if raw.contains('-') {
        raw
    } else {
        format!("{conversation_id}-{raw}")
    };
    let turn_id: TurnId = full
        .parse()
        .map_err(|e: Error| Error::parse(format!("{path}.turn_id"), e.to_string()))?;

    let utterance = obj
        .get("utterance")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::parse(format!("{path}.utterance"), "expected a string"))?
        .to_string();
    let resolved_utterance = optional_string(obj.get("resolved_utterance"), &format!("{path}.resolved_utterance"))?;
    let canonical_response = optional_string(obj.get("response"), &format!("{path}.response"))?;

    let prov_path = format!("{path}.ptkb_provenance");
    let human_ptkb_keys = match obj.get("ptkb_provenance") {
        None | Some(Value::Null) => None,
        Some(Value::Array(items)) => {
            let mut keys = BTreeSet::new();
            for (i, k) in items.iter().enumerate() {
                keys.insert(scalar_string(Some(k), &format!("{prov_path}[{i}]"))?);
            }
            Some(keys)
        }
        Some(_) => return Err(Error::parse(prov_path, "expected a list of keys")),
    };

    Ok(ConversationTurn {
        turn_id,
        utterance,
        resolved_utterance,
        canonical_response,
        human_ptkb_keys,
    })
}

fn scalar_string(v: Option<&Value>, path: &str) -> Result<String> {
    match v {
        Some(Value::String(s)) if !s.is_empty() => Ok(s.clone()),
        Some(Value::Number(n)) => Ok(n.to_string()),
        Some(_) => Err(Error::parse(path, "expected a non-empty string or number")),
        None => Err(Error::parse(path, "missing field")),
    }
}

fn optional_string(v: Option<&Value>, path: &str) -> Result<Option<String>> {
    match v {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(Error::parse(path, "expected a string")),
    }
}

/// Serializes conversations back into the topics schema accepted by
/// [`parse_topics`].
pub fn write_topics(conversations: &[Conversation]) -> Vec<u8> {
    let list: Vec<Value> = conversations
        .iter()
        .map(|c| {
            let mut ptkb = Map::new();
            for s in c.ptkb.iter() {
                ptkb.insert(s.key.clone(), Value::String(s.text.clone()));
            }
            let turns: Vec<Value> = c
                .turns
                .iter()
                .map(|t| {
                    let mut o = Map::new();
                    o.insert("turn_id".into(), json!(t.turn_id.as_str()));
                    o.insert("utterance".into(), json!(t.utterance));
                    if let Some(r) = &t.resolved_utterance {
                        o.insert("resolved_utterance".into(), json!(r));
                    }
                    if let Some(r) = &t.canonical_response {
                        o.insert("response".into(), json!(r));
                    }
                    if let Some(keys) = &t.human_ptkb_keys {
                        o.insert("ptkb_provenance".into(), json!(keys));
                    }
                    Value::Object(o)
                })
                .collect();
            json!({
                "number": c.conversation_id,
                "title": c.title,
                "ptkb": Value::Object(ptkb),
                "turns": turns,
            })
        })
        .collect();
    let mut out = serde_json::to_vec_pretty(&Value::Array(list)).expect("JSON values serialize");
    out.push(b'\n');
    out
}
