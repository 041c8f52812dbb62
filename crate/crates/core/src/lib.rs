//! Evaluation harness for personalized subjective multi-label text tasks.
//!
//! The pipeline runs: [`corpus`] (ingest, clean, split) → [`promptgen`]
//! (render prompts per scenario) → [`client`] (query a chat-completions
//! endpoint) → [`parser`] (answers to label sets) → [`metrics`] (F1-macro,
//! gain, report tables). [`baseline`] is a CPU-only user-conditioned linear
//! model used to measure the effect of user conditioning without an LLM.

pub mod baseline;
pub mod client;
pub mod corpus;
pub mod hashing;
pub mod import;
pub mod labels;
pub mod metrics;
pub mod parser;
pub mod promptgen;
pub mod scenario;
pub mod synthetic;

pub use baseline::{
    ab_evaluate, train, AbResult, FeatureConfig, Featurizer, LinearModel, TrainHyper,
};
pub use client::{ClientError, EndpointConfig, LlmClient, ResponseCache, RetryPolicy};
pub use corpus::{
    AnnotationCorpus, AnnotationRecord, CorpusError, NormalizedRow, Partition, SplitCorpus,
    SplitRatios, UserIndex,
};
pub use labels::{LabelSchema, LabelSet};
pub use metrics::{f1_macro, gain, report, ScenarioScore};
pub use parser::{
    normalize_token, parse_label_list, serialize_labels, ParseResult, PredictionRecord,
};
pub use promptgen::{
    build_prompt, emit_corpus, render_template, PromptInstance, Templates, UserContext,
};
pub use scenario::ScenarioId;
