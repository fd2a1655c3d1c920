//! Toolkit for personalized conversational retrieval experiments.
//!
//! The crate covers the full experiment loop: parsing conversational topics
//! that carry a personal textual knowledge base (PTKB), selecting relevant PTKB
//! sentences (human, LLM, and retrieval-impact annotation), reformulating the
//! current turn with a chat-completion model, retrieving with BM25 or exact
//! inner-product search, and scoring runs with MRR / NDCG / MAP plus paired
//! t-tests.
//!
//! Data-parallel loops (dense scoring, per-turn evaluation, per-turn model
//! calls) go through [`exec::Execution`], which uses rayon when the `parallel`
//! feature is enabled and falls back to plain iterators otherwise.

pub mod annotation;
pub mod artifact;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod http;
pub mod llm;
pub mod model;
pub mod pipeline;
pub mod reformulation;
pub mod retrieval;

pub use error::{Error, Result};
