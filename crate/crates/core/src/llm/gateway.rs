use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::cache::{cache_key, ResponseCache};
use super::client::{ChatBackend, ChatMessage, ChatRequest};
use super::structured::{parse_structured_output, Fields, ParseFailure};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewaySettings {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Re-asks after an unparseable answer.
    pub parse_retries: u32,
}

impl Default for GatewaySettings {
    fn default() -> Self {
        GatewaySettings {
            model: "gpt-3.5-turbo-16k".into(),
            temperature: 0.0,
            max_tokens: 1024,
            parse_retries: 2,
        }
    }
}

/// Outcome of a chat call whose answer must parse.
#[derive(Debug, Clone)]
pub struct Reply<T> {
    pub parsed: std::result::Result<T, ParseFailure>,
    /// Text of the last answer received.
    pub text: String,
    /// Chat calls made, including re-asks.
    pub calls: u32,
}

/// Cache-first front-end over a [`ChatBackend`].
pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    cache: ResponseCache,
    settings: GatewaySettings,
    requests: AtomicUsize,
    network_calls: AtomicUsize,
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>, cache: ResponseCache, settings: GatewaySettings) -> Self {
        Gateway {
            backend,
            cache,
            settings,
            requests: AtomicUsize::new(0),
            network_calls: AtomicUsize::new(0),
        }
    }

    pub fn settings(&self) -> &GatewaySettings {
        &self.settings
    }

    /// Chat calls issued through this gateway (cached or not).
    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    /// Calls that missed the cache and reached the backend.
    pub fn network_call_count(&self) -> usize {
        self.network_calls.load(Ordering::SeqCst)
    }

    pub fn request(&self, prompt: impl Into<String>) -> ChatRequest {
        ChatRequest {
            model: self.settings.model.clone(),
            messages: vec![ChatMessage::user(prompt)],
            temperature: self.settings.temperature,
            max_tokens: self.settings.max_tokens,
        }
    }

    pub fn chat(&self, request: &ChatRequest) -> Result<String> {
        request.validate()?;
        self.requests.fetch_add(1, Ordering::SeqCst);
        let key = cache_key(request);
        if let Some(text) = self.cache.get(&key) {
            return Ok(text);
        }
        self.network_calls.fetch_add(1, Ordering::SeqCst);
        let text = self.backend.complete(request)?;
        self.cache.put(request, &key, &text)?;
        Ok(text)
    }

    /// Sends `prompt` and parses the answer with `parse`, re-asking up to
    /// `parse_retries` times with `reminder` appended to the dialogue.
    pub fn chat_parsed<T, F>(&self, prompt: String, reminder: &str, parse: F) -> Result<Reply<T>>
    where
        F: Fn(&str) -> std::result::Result<T, ParseFailure>,
    {
        let mut request = self.request(prompt);
        let mut calls = 0;
        loop {
            let text = self.chat(&request)?;
            calls += 1;
            match parse(&text) {
                Ok(v) => {
                    return Ok(Reply {
                        parsed: Ok(v),
                        text,
                        calls,
                    })
                }
                Err(e) if calls > self.settings.parse_retries => {
                    return Ok(Reply {
                        parsed: Err(e),
                        text,
                        calls,
                    })
                }
                Err(_) => {
                    request.messages.push(ChatMessage::assistant(text));
                    request.messages.push(ChatMessage::user(reminder));
                }
            }
        }
    }

    pub fn chat_structured(&self, prompt: String, fields: &[&str]) -> Result<Reply<Fields>> {
        let reminder = format!(
            "Your previous answer could not be parsed. Reply with only a JSON object with the fields {}.",
            fields
                .iter()
                .map(|f| format!("\"{f}\""))
                .collect::<Vec<_>>()
                .join(", ")
        );
        self.chat_parsed(prompt, &reminder, |t| parse_structured_output(t, fields))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    struct Scripted {
        answers: Mutex<Vec<String>>,
        seen: Mutex<Vec<ChatRequest>>,
    }

    impl Scripted {
        fn new(answers: &[&str]) -> Arc<Self> {
            Arc::new(Scripted {
                answers: Mutex::new(answers.iter().rev().map(|s| s.to_string()).collect()),
                seen: Mutex::new(Vec::new()),
            })
        }
    }

    impl ChatBackend for Scripted {
        fn complete(&self, request: &ChatRequest) -> Result<String> {
            self.seen.lock().unwrap().push(request.clone());
            Ok(self.answers.lock().unwrap().pop().unwrap_or_default())
        }
    }

    #[test]
    fn second_identical_request_is_cached() {
        let backend = Scripted::new(&["fixed text"]);
        let g = Gateway::new(backend.clone(), ResponseCache::in_memory(), GatewaySettings::default());
        let r = g.request("hello");
        assert_eq!(g.chat(&r).unwrap(), "fixed text");
        assert_eq!(g.chat(&r).unwrap(), "fixed text");
        assert_eq!(g.network_call_count(), 1);
        assert_eq!(g.request_count(), 2);
    }

    #[test]
    fn structured_reask_then_success() {
        let backend = Scripted::new(&["garbage", r#"{"rewrite":"R","response":"A"}"#]);
        let g = Gateway::new(backend.clone(), ResponseCache::in_memory(), GatewaySettings::default());
        let reply = g.chat_structured("p".into(), &["rewrite", "response"]).unwrap();
        assert_eq!(reply.parsed.unwrap()["rewrite"], "R");
        assert_eq!(reply.calls, 2);
        let seen = backend.seen.lock().unwrap();
        assert_eq!(seen[1].messages.len(), 3);
        assert_eq!(seen[1].messages[1].content, "garbage");
    }

    #[test]
    fn budget_zero_gives_parse_failure() {
        let backend = Scripted::new(&["garbage"]);
        let settings = GatewaySettings {
            parse_retries: 0,
            ..GatewaySettings::default()
        };
        let g = Gateway::new(backend, ResponseCache::in_memory(), settings);
        let reply = g.chat_structured("p".into(), &["rewrite"]).unwrap();
        assert!(reply.parsed.is_err());
        assert_eq!(reply.calls, 1);
    }
}
