//! Completion client: bounded concurrency, retry with exponential
//! backoff, and response trimming, generic over the transport backend.

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::prompt::{build_prompt, PromptTemplate};
use super::{BackendError, LlmError};

/// Transport and decoding settings for one backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub max_output_tokens: u32,
    /// 0 by default: corrections are evaluated deterministically.
    pub temperature: f64,
    pub request_timeout_secs: f64,
    pub max_retries: u32,
    pub max_concurrent_requests: usize,
    /// First retry delay; doubles per attempt. Zero disables sleeping.
    pub backoff_base_ms: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            endpoint_url: String::new(),
            model_name: String::new(),
            max_output_tokens: 256,
            temperature: 0.0,
            request_timeout_secs: 30.0,
            max_retries: 2,
            max_concurrent_requests: 4,
            backoff_base_ms: 200,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.max_concurrent_requests == 0 {
            return Err(LlmError::Config(
                "max_concurrent_requests must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// One correction request as a backend sees it. The candidate list rides
/// along so mock backends can echo without parsing the prompt; HTTP
/// backends only use the prompt.
#[derive(Debug)]
pub struct CorrectionRequest<'a> {
    pub utt_id: &'a str,
    pub prompt: &'a str,
    pub candidates: &'a [String],
}

pub trait CompletionBackend: Send + Sync {
    fn complete(&self, request: &CorrectionRequest<'_>) -> Result<String, BackendError>;
}

/// Counting semaphore; keeps in-flight requests at or under the bound.
struct Gate {
    state: Mutex<usize>,
    cond: Condvar,
    limit: usize,
}

impl Gate {
    fn new(limit: usize) -> Self {
        Self {
            state: Mutex::new(0),
            cond: Condvar::new(),
            limit,
        }
    }

    fn acquire(&self) -> GatePermit<'_> {
        let mut in_flight = self.state.lock().unwrap();
        while *in_flight >= self.limit {
            in_flight = self.cond.wait(in_flight).unwrap();
        }
        *in_flight += 1;
        GatePermit { gate: self }
    }
}

struct GatePermit<'a> {
    gate: &'a Gate,
}

impl Drop for GatePermit<'_> {
    fn drop(&mut self) {
        let mut in_flight = self.gate.state.lock().unwrap();
        *in_flight -= 1;
        self.gate.cond.notify_one();
    }
}

/// A shareable correction client over some [`CompletionBackend`].
pub struct LlmClient {
    backend: Arc<dyn CompletionBackend>,
    config: BackendConfig,
    gate: Gate,
}

impl LlmClient {
    pub fn new(backend: Arc<dyn CompletionBackend>, config: BackendConfig) -> Result<Self, LlmError> {
        config.validate()?;
        let gate = Gate::new(config.max_concurrent_requests);
        Ok(Self {
            backend,
            config,
            gate,
        })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    /// Builds the prompt, sends it, and parses the completion to a single
    /// trimmed transcription. Transport failures are retried up to
    /// `max_retries` with exponential backoff; an empty completion and a
    /// protocol error are immediate, distinguishable failures.
    pub fn correct(
        &self,
        utt_id: &str,
        candidates: &[String],
        template: &PromptTemplate,
    ) -> Result<String, LlmError> {
        let prompt = build_prompt(candidates, template)?;
        let request = CorrectionRequest {
            utt_id,
            prompt: &prompt,
            candidates,
        };
        let mut last_transport = String::new();
        let mut attempts = 0;
        for attempt in 0..=self.config.max_retries {
            attempts = attempt + 1;
            let outcome = {
                let _permit = self.gate.acquire();
                self.backend.complete(&request)
            };
            match outcome {
                Ok(raw) => {
                    let trimmed = raw.trim();
                    if trimmed.is_empty() {
                        return Err(LlmError::EmptyCompletion {
                            utt_id: utt_id.to_string(),
                        });
                    }
                    return Ok(trimmed.to_string());
                }
                Err(BackendError::Protocol(message)) => {
                    return Err(LlmError::Protocol {
                        utt_id: utt_id.to_string(),
                        message,
                    });
                }
                Err(BackendError::Transport(message)) => {
                    last_transport = message;
                    if attempt < self.config.max_retries && self.config.backoff_base_ms > 0 {
                        let delay = self.config.backoff_base_ms << attempt;
                        std::thread::sleep(Duration::from_millis(delay));
                    }
                }
            }
        }
        Err(LlmError::Transport {
            utt_id: utt_id.to_string(),
            attempts,
            last: last_transport,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::mock::{MockBackend, MockReply};

    fn client_with(backend: MockBackend, config: BackendConfig) -> (Arc<MockBackend>, LlmClient) {
        let backend = Arc::new(backend);
        let client = LlmClient::new(backend.clone(), config).unwrap();
        (backend, client)
    }

    fn fast_config() -> BackendConfig {
        BackendConfig {
            backoff_base_ms: 0,
            ..Default::default()
        }
    }

    #[test]
    fn echo_mock_returns_first_candidate() {
        let (_, client) = client_with(MockBackend::echo(), fast_config());
        let out = client
            .correct("u1", &["первый".into(), "второй".into()], &PromptTemplate::english())
            .unwrap();
        assert_eq!(out, "первый");
    }

    #[test]
    fn scripted_output_flows_through_unmodified() {
        let backend = MockBackend::echo().with_reply("u1", MockReply::Output("拘束条件".into()));
        let (_, client) = client_with(backend, fast_config());
        let out = client
            .correct("u1", &["高速条件".into()], &PromptTemplate::english())
            .unwrap();
        assert_eq!(out, "拘束条件");
    }

    #[test]
    fn empty_completion_is_a_distinct_error() {
        let backend = MockBackend::echo().with_reply("u1", MockReply::Output("  ".into()));
        let (_, client) = client_with(backend, fast_config());
        assert_eq!(
            client.correct("u1", &["x".into()], &PromptTemplate::english()),
            Err(LlmError::EmptyCompletion { utt_id: "u1".into() })
        );
    }

    #[test]
    fn transport_errors_are_retried_then_surfaced() {
        let backend = MockBackend::echo().with_reply("u1", MockReply::FailTransport);
        let config = BackendConfig {
            max_retries: 2,
            backoff_base_ms: 0,
            ..Default::default()
        };
        let (backend, client) = client_with(backend, config);
        match client.correct("u1", &["x".into()], &PromptTemplate::english()) {
            Err(LlmError::Transport { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("expected transport error, got {other:?}"),
        }
        assert_eq!(backend.calls(), 3);
    }

    #[test]
    fn flaky_transport_recovers_within_retry_budget() {
        let backend = MockBackend::echo().failing_first(2);
        let config = BackendConfig {
            max_retries: 2,
            backoff_base_ms: 0,
            ..Default::default()
        };
        let (backend, client) = client_with(backend, config);
        let out = client
            .correct("u1", &["ok".into()], &PromptTemplate::english())
            .unwrap();
        assert_eq!(out, "ok");
        assert_eq!(backend.calls(), 3);
    }

    #[test]
    fn concurrent_calls_respect_the_bound() {
        let backend = MockBackend::echo().with_latency(Duration::from_millis(20));
        let config = BackendConfig {
            max_concurrent_requests: 3,
            backoff_base_ms: 0,
            ..Default::default()
        };
        let (backend, client) = client_with(backend, config);
        std::thread::scope(|scope| {
            for i in 0..12 {
                let client = &client;
                scope.spawn(move || {
                    let candidates = vec![format!("text {i}")];
                    client
                        .correct(&format!("u{i}"), &candidates, &PromptTemplate::english())
                        .unwrap();
                });
            }
        });
        assert_eq!(backend.calls(), 12);
        assert!(backend.max_in_flight() <= 3, "saw {}", backend.max_in_flight());
    }

    #[test]
    fn zero_concurrency_is_a_config_error() {
        let config = BackendConfig {
            max_concurrent_requests: 0,
            ..Default::default()
        };
        assert!(LlmClient::new(Arc::new(MockBackend::echo()), config).is_err());
    }
}
