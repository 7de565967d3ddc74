//! Reasoning-trace synthesis: prompt assembly, completion clients, response
//! parsing and the retention gate.

mod client;
mod prompt;
mod record;

use thiserror::Error;

pub use client::{
    CachedClient, Completion, CompletionClient, EndpointConfig, HttpCompletionClient, StubCompletionClient, StubConfig,
    STUB_HALLUCINATION,
};
pub use prompt::{assemble_prompt, render_path, PromptTemplate, SynthesisPrompt, DEFAULT_TEMPLATE, SECTION_HEADERS};
pub use record::{
    emit_training_record, parse_reasoning, parse_training_output, validate_retention, ReasoningRecord,
    RetentionVerdict, TrainingRecord, DEFAULT_RETENTION,
};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SynthesisError {
    #[error("prompt template: {0}")]
    Template(String),
    #[error("sample {0}: thinking graph is empty")]
    EmptyThinkingGraph(String),
    #[error("sample {sample_id}: gave up after {attempts} attempts: {message}")]
    Exhausted {
        sample_id: String,
        attempts: u32,
        message: String,
    },
    #[error("sample {sample_id}: endpoint returned {status}: {body}")]
    Http {
        sample_id: String,
        status: u16,
        body: String,
    },
    #[error("sample {sample_id}: unexpected response: {message}")]
    BadResponse { sample_id: String, message: String },
    #[error("environment variable {0} holding the endpoint token is not set")]
    MissingToken(String),
    #[error("response is missing the {0} section")]
    MissingSection(&'static str),
    #[error("response section {0} is empty")]
    EmptySection(&'static str),
    #[error("sample {0}: record was not accepted by the retention gate")]
    NotAccepted(String),
    #[error("sample {0}: reasoning text contains think tags")]
    NestedThinkTag(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}
