//! Knowledge graph completion with text-completion models.
//!
//! Triples from benchmark graphs are rendered into natural-language prompts
//! for triple classification, relation prediction and entity (link)
//! prediction. The crate exports instruction-tuning corpora, runs resumable
//! evaluations against any chat-completions endpoint (or a seeded oracle),
//! and scores responses with polarity-word and label-containment rules.

pub mod backend;
pub mod corpus;
pub mod kg;
pub mod prompt;
pub mod report;
pub mod runlog;
pub mod runner;
pub mod scorer;

pub use kg::{DatasetKind, KnowledgeGraph, NeighborSamplingConfig, Split, Triple};
pub use prompt::{Direction, PromptCase, Task, TaskKind, TEMPLATE_VERSION};

/// Tool name and version stamped into reports and manifests.
pub const TOOL_VERSION: &str = concat!("kgllm ", env!("CARGO_PKG_VERSION"));
