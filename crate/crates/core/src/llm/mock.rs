//! Scriptable in-process backend, adequate for running whole pipelines
//! and acceptance tests without a network.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU32, AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::client::{CompletionBackend, CorrectionRequest};
use super::BackendError;

/// Per-utterance scripted behavior.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockReply {
    /// Return this exact text.
    Output(String),
    /// Return the first candidate.
    Echo,
    /// Fail with a transport error every time.
    FailTransport,
}

/// Default behavior for utterances without a scripted reply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockDefault {
    #[default]
    Echo,
    FailTransport,
}

/// Deterministic completion backend keyed by utterance id, with transport
/// failure injection and an observable in-flight counter for concurrency
/// assertions.
#[derive(Debug, Default)]
pub struct MockBackend {
    script: HashMap<String, MockReply>,
    default: MockDefault,
    latency: Option<Duration>,
    fail_first: AtomicU32,
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
}

impl MockBackend {
    /// A backend that echoes the first candidate for every utterance.
    pub fn echo() -> Self {
        Self::default()
    }

    /// A backend that fails with a transport error unless scripted.
    pub fn unreachable() -> Self {
        Self {
            default: MockDefault::FailTransport,
            ..Self::default()
        }
    }

    pub fn with_reply(mut self, utt_id: impl Into<String>, reply: MockReply) -> Self {
        self.script.insert(utt_id.into(), reply);
        self
    }

    pub fn with_script(mut self, script: HashMap<String, MockReply>) -> Self {
        self.script.extend(script);
        self
    }

    /// Injects `n` transport failures before any request succeeds.
    pub fn failing_first(self, n: u32) -> Self {
        self.fail_first.store(n, Ordering::SeqCst);
        self
    }

    /// Adds artificial latency per request so concurrency is observable.
    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = Some(latency);
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Highest number of requests ever simultaneously in flight.
    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }
}

impl CompletionBackend for MockBackend {
    fn complete(&self, request: &CorrectionRequest<'_>) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let current = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(current, Ordering::SeqCst);
        if let Some(latency) = self.latency {
            std::thread::sleep(latency);
        }
        let result = self.reply_for(request);
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        result
    }
}

impl MockBackend {
    fn reply_for(&self, request: &CorrectionRequest<'_>) -> Result<String, BackendError> {
        if self
            .fail_first
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_ok()
        {
            return Err(BackendError::Transport("injected failure".into()));
        }
        let echo = || {
            request
                .candidates
                .first()
                .cloned()
                .ok_or_else(|| BackendError::Protocol("no candidates to echo".into()))
        };
        match self.script.get(request.utt_id) {
            Some(MockReply::Output(text)) => Ok(text.clone()),
            Some(MockReply::Echo) => echo(),
            Some(MockReply::FailTransport) => {
                Err(BackendError::Transport("scripted failure".into()))
            }
            None => match self.default {
                MockDefault::Echo => echo(),
                MockDefault::FailTransport => {
                    Err(BackendError::Transport("unreachable by script".into()))
                }
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request<'a>(utt_id: &'a str, candidates: &'a [String]) -> CorrectionRequest<'a> {
        CorrectionRequest {
            utt_id,
            prompt: "p",
            candidates,
        }
    }

    #[test]
    fn echo_default_and_script_override() {
        let backend = MockBackend::echo().with_reply("u2", MockReply::Output("fixed".into()));
        let candidates = vec!["first".to_string(), "second".to_string()];
        assert_eq!(backend.complete(&request("u1", &candidates)).unwrap(), "first");
        assert_eq!(backend.complete(&request("u2", &candidates)).unwrap(), "fixed");
        assert_eq!(backend.calls(), 2);
    }

    #[test]
    fn unreachable_default_fails_transport() {
        let backend = MockBackend::unreachable();
        let candidates = vec!["x".to_string()];
        assert!(matches!(
            backend.complete(&request("u1", &candidates)),
            Err(BackendError::Transport(_))
        ));
    }

    #[test]
    fn fail_first_counts_down() {
        let backend = MockBackend::echo().failing_first(1);
        let candidates = vec!["x".to_string()];
        assert!(backend.complete(&request("u1", &candidates)).is_err());
        assert_eq!(backend.complete(&request("u1", &candidates)).unwrap(), "x");
    }
}
