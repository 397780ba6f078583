//! Discourse-driven evidence retrieval for long-document question answering.
//!
//! Documents are condensed into per-section summaries, a model picks the
//! relevant sections from that condensed view, and only the paragraphs of
//! those sections are examined for fine-grained evidence. Baselines, a
//! self-ask agent for multi-hop questions and an evaluation harness are
//! included so that every approach can be compared on quality and cost.

pub mod baselines;
pub mod condenser;
pub mod discourse;
pub mod error;
pub mod eval;
pub mod evidence;
pub mod fine_retrieval;
pub mod gateway;
pub mod ingest;
pub mod prompts;
pub mod qa;
pub mod runner;
pub mod section_select;

pub use error::{Error, Result};
