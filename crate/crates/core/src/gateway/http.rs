//! Blocking adapters for completions-style and messages-style HTTP APIs.

use std::time::Duration;

use serde_json::{json, Value};

use super::{Backend, BackendKind, Completion, GatewayError, GeneratorSpec};

pub const OPENAI_KEY_VAR: &str = "OPENAI_API_KEY";
pub const ANTHROPIC_KEY_VAR: &str = "ANTHROPIC_API_KEY";
const OPENAI_BASE: &str = "https://api.openai.com";
const ANTHROPIC_BASE: &str = "https://api.anthropic.com";
const ANTHROPIC_VERSION: &str = "2023-06-01";

#[derive(Debug)]
pub struct HttpBackend {
    kind: BackendKind,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    /// Reads the credential for `kind` from its environment variable.
    pub fn from_env(kind: BackendKind, timeout: Duration) -> Result<Self, GatewayError> {
        let var = match kind {
            BackendKind::OpenaiCompletions => OPENAI_KEY_VAR,
            BackendKind::AnthropicMessages => ANTHROPIC_KEY_VAR,
            BackendKind::Mock => {
                return Err(GatewayError::InvalidSpec(
                    "mock is not an HTTP backend".into(),
                ))
            }
        };
        Self::with_key(
            kind,
            std::env::var(var).ok().filter(|k| !k.is_empty()),
            timeout,
        )
    }

    pub fn with_key(
        kind: BackendKind,
        api_key: Option<String>,
        timeout: Duration,
    ) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::Network(e.to_string()))?;
        Ok(Self {
            kind,
            api_key,
            client,
        })
    }

    fn url(&self, spec: &GeneratorSpec) -> String {
        let (base, path) = match self.kind {
            BackendKind::AnthropicMessages => (ANTHROPIC_BASE, "/v1/messages"),
            _ => (OPENAI_BASE, "/v1/completions"),
        };
        let base = spec
            .endpoint
            .as_deref()
            .unwrap_or(base)
            .trim_end_matches('/');
        format!("{base}{path}")
    }
}

fn classify(status: u16, body: String) -> GatewayError {
    match status {
        401 | 403 => GatewayError::Auth(format!("status {status}: {body}")),
        429 => GatewayError::RateLimited,
        _ => GatewayError::Http { status, body },
    }
}

fn count(v: &Value, key: &str) -> Option<u64> {
    v.get("usage")?.get(key)?.as_u64()
}

impl Backend for HttpBackend {
    fn complete(&self, spec: &GeneratorSpec, prompt: &str) -> Result<Completion, GatewayError> {
        let key = self.api_key.as_deref().ok_or_else(|| {
            let var = if self.kind == BackendKind::AnthropicMessages {
                ANTHROPIC_KEY_VAR
            } else {
                OPENAI_KEY_VAR
            };
            GatewayError::Auth(format!("{var} is not set"))
        })?;
        let request = match self.kind {
            BackendKind::AnthropicMessages => self
                .client
                .post(self.url(spec))
                .header("x-api-key", key)
                .header("anthropic-version", ANTHROPIC_VERSION)
                .json(&json!({
                    "model": spec.model_id,
                    "max_tokens": spec.max_tokens,
                    "temperature": spec.temperature,
                    "messages": [{"role": "user", "content": prompt}],
                })),
            _ => self
                .client
                .post(self.url(spec))
                .bearer_auth(key)
                .json(&json!({
                    "model": spec.model_id,
                    "prompt": prompt,
                    "max_tokens": spec.max_tokens,
                    "temperature": spec.temperature,
                })),
        };
        let response = request.send().map_err(|e| {
            if e.is_timeout() {
                GatewayError::Timeout
            } else {
                GatewayError::Network(e.to_string())
            }
        })?;
        let status = response.status().as_u16();
        let body = response.text().map_err(|e| {
            if e.is_timeout() {
                GatewayError::Timeout
            } else {
                GatewayError::Network(e.to_string())
            }
        })?;
        if !(200..300).contains(&status) {
            return Err(classify(status, body));
        }
        let v: Value =
            serde_json::from_str(&body).map_err(|e| GatewayError::Malformed(e.to_string()))?;
        let (text, prompt_tokens, completion_tokens) = match self.kind {
            BackendKind::AnthropicMessages => {
                let blocks = v
                    .get("content")
                    .and_then(Value::as_array)
                    .ok_or_else(|| GatewayError::Malformed("missing content array".into()))?;
                let text: String = blocks
                    .iter()
                    .filter(|b| b.get("type").and_then(Value::as_str) == Some("text"))
                    .filter_map(|b| b.get("text").and_then(Value::as_str))
                    .collect();
                (text, count(&v, "input_tokens"), count(&v, "output_tokens"))
            }
            _ => {
                let text = v
                    .pointer("/choices/0/text")
                    .and_then(Value::as_str)
                    .ok_or_else(|| GatewayError::Malformed("missing choices[0].text".into()))?;
                (
                    text.to_string(),
                    count(&v, "prompt_tokens"),
                    count(&v, "completion_tokens"),
                )
            }
        };
        if text.trim().is_empty() {
            return Err(GatewayError::EmptyCompletion);
        }
        Ok(Completion {
            text,
            prompt_tokens,
            completion_tokens,
        })
    }
}
