//! Prompt construction, transport to completion endpoints, response
//! parsing, and degenerate-output guarding. Backends are pluggable; the
//! scriptable [`mock::MockBackend`] stands in for a served model so whole
//! pipelines run without a network.

mod client;
mod guard;
mod prompt;

pub mod http;
pub mod mock;

pub use client::{BackendConfig, CompletionBackend, CorrectionRequest, LlmClient};
pub use guard::{guard_output, GuardDecision, GuardPolicy, GuardReason};
pub use prompt::{build_prompt, LanguageVariant, PromptTemplate};

use thiserror::Error;

/// Backend-level failure, as seen by the retry loop: transport errors are
/// retried, protocol errors (unusable response shapes) are not.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("protocol: {0}")]
    Protocol(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum LlmError {
    #[error("candidate list is empty")]
    EmptyCandidates,
    #[error("backend returned an empty completion for {utt_id}")]
    EmptyCompletion { utt_id: String },
    #[error("transport failed for {utt_id} after {attempts} attempt(s): {last}")]
    Transport {
        utt_id: String,
        attempts: u32,
        last: String,
    },
    #[error("backend protocol error for {utt_id}: {message}")]
    Protocol { utt_id: String, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
}
