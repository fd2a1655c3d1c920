//! Extraction of structured fields from free-form model output.

use indexmap::IndexMap;
use serde_json::Value;

/// The model text did not contain a usable structured block.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unparseable model output: {reason}")]
pub struct ParseFailure {
    pub reason: String,
}

impl ParseFailure {
    fn new(reason: impl Into<String>) -> Self {
        ParseFailure {
            reason: reason.into(),
        }
    }
}

pub type Fields = IndexMap<String, String>;

/// Finds the first JSON object in `text` (fenced or bare) that carries every
/// expected field. Field names match case-insensitively. List values are
/// joined with commas; `null` becomes the empty string.
pub fn parse_structured_output(text: &str, expected_fields: &[&str]) -> Result<Fields, ParseFailure> {
    if expected_fields.is_empty() {
        return Err(ParseFailure::new("no expected fields"));
    }
    for candidate in candidates(text) {
        let Ok(Value::Object(obj)) = serde_json::from_str::<Value>(candidate) else {
            continue;
        };
        let mut out = Fields::new();
        for &field in expected_fields {
            let found = obj
                .iter()
                .find(|(k, _)| k.eq_ignore_ascii_case(field))
                .map(|(_, v)| v);
            match found.and_then(value_text) {
                Some(v) => {
                    out.insert(field.to_string(), v);
                }
                None => break,
            }
        }
        if out.len() == expected_fields.len() {
            return Ok(out);
        }
    }
    Err(ParseFailure::new(format!(
        "no JSON object with fields {expected_fields:?}"
    )))
}

fn value_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        Value::Null => Some(String::new()),
        Value::Array(items) => items
            .iter()
            .map(|i| match i {
                Value::Array(_) | Value::Object(_) => None,
                other => value_text(other),
            })
            .collect::<Option<Vec<_>>>()
            .map(|v| v.join(",")),
        Value::Object(_) => None,
    }
}

/// Fenced code blocks first, then every balanced `{...}` span in order.
fn candidates(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find("```") {
        let after = &rest[start + 3..];
        let body_start = after.find('\n').map_or(0, |i| i + 1);
        let Some(end) = after[body_start..].find("```") else {
            break;
        };
        out.push(after[body_start..body_start + end].trim());
        rest = &after[body_start + end + 3..];
    }
    let bytes = text.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'{' {
            if let Some(end) = balanced_end(&text[i..]) {
                out.push(&text[i..i + end]);
            }
        }
    }
    out
}

/// Length of the balanced object starting at `s[0] == '{'`, honouring JSON
/// string escapes.
fn balanced_end(s: &str) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in s.char_indices() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

/// Parses a PTKB key list such as `1,3`, `[2, 5]`, `"4"` or `none`.
///
/// Keys must be separated by commas or semicolons; free prose fails.
pub fn parse_key_list(text: &str) -> Result<Vec<String>, ParseFailure> {
    let trimmed = text
        .trim()
        .trim_end_matches('.')
        .trim()
        .trim_start_matches('[')
        .trim_end_matches(']')
        .trim();
    if trimmed.is_empty()
        || trimmed.eq_ignore_ascii_case("none")
        || trimmed.eq_ignore_ascii_case("\"none\"")
    {
        return Ok(Vec::new());
    }
    let mut keys = Vec::new();
    for piece in trimmed.split([',', ';']) {
        let key = piece.trim().trim_matches(['"', '\'']).trim();
        if key.is_empty() {
            continue;
        }
        if key.eq_ignore_ascii_case("none") {
            continue;
        }
        if !key
            .chars()
            .all(|c| c.is_alphanumeric() || matches!(c, '_' | '-' | '.'))
        {
            return Err(ParseFailure::new(format!("`{key}` is not a key")));
        }
        if !keys.iter().any(|k| k == key) {
            keys.push(key.to_string());
        }
    }
    Ok(keys)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_object() {
        let f = parse_structured_output(r#"{"rewrite":"R","response":"A"}"#, &["rewrite", "response"]).unwrap();
        assert_eq!(f["rewrite"], "R");
        assert_eq!(f["response"], "A");
    }

    #[test]
    fn prose_wrapped_and_fenced() {
        let text = "Sure! Here is my answer:\n```json\n{\"rewrite\": \"best {vegan} food\", \"response\": \"Tofu.\"}\n```\nHope it helps.";
        let f = parse_structured_output(text, &["rewrite", "response"]).unwrap();
        assert_eq!(f["rewrite"], "best {vegan} food");

        let text = "I think {maybe} this: {\"Rewrite\": \"x\", \"response\": null} ok";
        let f = parse_structured_output(text, &["rewrite", "response"]).unwrap();
        assert_eq!(f["rewrite"], "x");
        assert_eq!(f["response"], "");
    }

    #[test]
    fn list_values_join() {
        let f = parse_structured_output(r#"{"ptkb_selection":[1,"3"]}"#, &["ptkb_selection"]).unwrap();
        assert_eq!(f["ptkb_selection"], "1,3");
    }

    #[test]
    fn garbage_fails() {
        assert!(parse_structured_output("no idea", &["rewrite"]).is_err());
        assert!(parse_structured_output(r#"{"other": 1}"#, &["rewrite"]).is_err());
        assert!(parse_structured_output(r#"{"rewrite": "x"}"#, &[]).is_err());
    }

    #[test]
    fn key_lists() {
        assert_eq!(parse_key_list("1,3").unwrap(), ["1", "3"]);
        assert_eq!(parse_key_list(" [2, 5]. ").unwrap(), ["2", "5"]);
        assert!(parse_key_list("none").unwrap().is_empty());
        assert!(parse_key_list("None.").unwrap().is_empty());
        assert!(parse_key_list("").unwrap().is_empty());
        assert_eq!(parse_key_list("7").unwrap(), ["7"]);
        assert_eq!(parse_key_list("\"4\", \"4\"").unwrap(), ["4"]);
        assert!(parse_key_list("The relevant sentence is 2").is_err());
    }
}
