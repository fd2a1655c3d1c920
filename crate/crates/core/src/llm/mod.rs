//! Prompt rendering, chat-completion calls with a content-addressed cache,
//! and parsing of structured model answers.

mod cache;
mod client;
mod gateway;
mod structured;
mod template;

pub use cache::{cache_key, CachedResponse, ResponseCache};
pub use client::{ChatBackend, ChatMessage, ChatRequest, HttpChatBackend, Role};
pub use gateway::{Gateway, GatewaySettings, Reply};
pub use structured::{parse_key_list, parse_structured_output, Fields, ParseFailure};
pub use template::{
    escape_braces, render_prompt, PromptSection, PromptTemplate, SectionKind, TemplateSet,
};
