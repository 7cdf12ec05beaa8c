//! JSON-over-HTTP completion backend in the de facto open
//! completion-endpoint shape: the request carries `model`, `prompt`,
//! `temperature`, and `max_tokens`; the reply's completion text is looked
//! up under the common field layouts.

use std::time::Duration;

use serde_json::{json, Value};
use ureq::Agent;

use super::client::{BackendConfig, CompletionBackend, CorrectionRequest};
use super::BackendError;

/// Environment variable overriding the configured endpoint URL.
pub const ENDPOINT_ENV: &str = "MPAGER_ENDPOINT";
/// Environment variable supplying a bearer token.
pub const API_KEY_ENV: &str = "MPAGER_API_KEY";

pub struct HttpBackend {
    agent: Agent,
    endpoint_url: String,
    model_name: String,
    max_output_tokens: u32,
    temperature: f64,
    api_key: Option<String>,
}

impl HttpBackend {
    /// Builds a backend from config, applying the `MPAGER_ENDPOINT` and
    /// `MPAGER_API_KEY` environment overrides.
    pub fn from_config(config: &BackendConfig) -> Self {
        let endpoint_url = std::env::var(ENDPOINT_ENV).unwrap_or_else(|_| config.endpoint_url.clone());
        let api_key = std::env::var(API_KEY_ENV).ok();
        Self::new(config, endpoint_url, api_key)
    }

    pub fn new(config: &BackendConfig, endpoint_url: String, api_key: Option<String>) -> Self {
        let agent_config = Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.request_timeout_secs)))
            .http_status_as_error(false)
            .build();
        Self {
            agent: agent_config.into(),
            endpoint_url,
            model_name: config.model_name.clone(),
            max_output_tokens: config.max_output_tokens,
            temperature: config.temperature,
            api_key,
        }
    }
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, request: &CorrectionRequest<'_>) -> Result<String, BackendError> {
        let body = json!({
            "model": self.model_name,
            "prompt": request.prompt,
            "temperature": self.temperature,
            "max_tokens": self.max_output_tokens,
        });
        let mut req = self.agent.post(&self.endpoint_url);
        if let Some(key) = &self.api_key {
            req = req.header("authorization", &format!("Bearer {key}"));
        }
        let mut response = req
            .send_json(&body)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            return Err(BackendError::Transport(format!(
                "endpoint returned HTTP {status}"
            )));
        }
        let value: Value = response
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::Protocol(format!("unparseable response body: {e}")))?;
        extract_completion(&value).ok_or_else(|| {
            BackendError::Protocol("response carries no completion text field".into())
        })
    }
}

/// Pulls the completion text out of the common response layouts:
/// `choices[i].text`, `choices[i].message.content`, `text`, `completion`.
/// The first non-empty entry wins.
fn extract_completion(value: &Value) -> Option<String> {
    if let Some(choices) = value.get("choices").and_then(Value::as_array) {
        for choice in choices {
            let text = choice
                .get("text")
                .and_then(Value::as_str)
                .or_else(|| {
                    choice
                        .get("message")
                        .and_then(|m| m.get("content"))
                        .and_then(Value::as_str)
                });
            if let Some(text) = text {
                if !text.trim().is_empty() {
                    return Some(text.to_string());
                }
            }
        }
        // All choices empty: report an empty completion, not a protocol error.
        if !choices.is_empty() {
            return Some(String::new());
        }
    }
    for field in ["text", "completion"] {
        if let Some(text) = value.get(field).and_then(Value::as_str) {
            return Some(text.to_string());
        }
    }
    None
}
