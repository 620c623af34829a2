//! Chat-completions HTTP backend with bounded retries.

use std::time::Duration;

use rand::Rng;
use serde_json::{json, Value};

use super::{ChatBackend, Completion, LlmError, Message};
use crate::config::LlmBackendConfig;

pub const MAX_ATTEMPTS: u32 = 3;
const REQUEST_TIMEOUT: Duration = Duration::from_secs(300);

pub struct HttpBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: String,
    model_id: String,
    temperature: f64,
    max_output_tokens: u32,
    retry_base: Duration,
}

impl HttpBackend {
    /// Reads the credential from the configured environment variable. A
    /// missing variable is a configuration error raised before any request.
    pub fn from_config(cfg: &LlmBackendConfig) -> Result<Self, LlmError> {
        let endpoint = cfg
            .endpoint
            .clone()
            .ok_or_else(|| LlmError::Config("http backend needs an endpoint".into()))?;
        let var = cfg
            .credential_env
            .clone()
            .ok_or_else(|| LlmError::Config("http backend needs credential_env".into()))?;
        let api_key = std::env::var(&var)
            .map_err(|_| LlmError::Config(format!("environment variable {var} is not set")))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(REQUEST_TIMEOUT)
            .build()
            .map_err(|err| LlmError::Config(err.to_string()))?;
        Ok(Self {
            client,
            endpoint,
            api_key,
            model_id: cfg.model_id.clone(),
            temperature: cfg.temperature,
            max_output_tokens: cfg.max_output_tokens,
            retry_base: Duration::from_millis(cfg.retry_base_delay_ms),
        })
    }

    fn body(&self, messages: &[Message]) -> Value {
        let messages: Vec<Value> = messages
            .iter()
            .map(|m| json!({"role": m.role, "content": m.content}))
            .collect();
        json!({
            "model": self.model_id,
            "messages": messages,
            "temperature": self.temperature,
            "max_tokens": self.max_output_tokens,
        })
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let base = self.retry_base * 2u32.pow(attempt.saturating_sub(1));
        let jitter_ms = self.retry_base.as_millis() as u64 / 2;
        let jitter = if jitter_ms == 0 {
            0
        } else {
            rand::rng().random_range(0..=jitter_ms)
        };
        base + Duration::from_millis(jitter)
    }
}

/// Whether a failed attempt may be retried, and why it failed.
enum Failure {
    Retry(String),
    Fatal(LlmError),
}

impl HttpBackend {
    fn attempt(&self, body: &Value) -> Result<Completion, Failure> {
        let response = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(body)
            .send()
            .map_err(|err| Failure::Retry(err.to_string()))?;
        let status = response.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(Failure::Retry(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let text = response.text().unwrap_or_default();
            return Err(Failure::Fatal(LlmError::BadResponse(format!("HTTP {status}: {text}"))));
        }
        let value: Value = response
            .json()
            .map_err(|err| Failure::Retry(format!("undecodable body: {err}")))?;
        parse_completion(&value).map_err(Failure::Fatal)
    }
}

pub(crate) fn parse_completion(value: &Value) -> Result<Completion, LlmError> {
    let text = value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| LlmError::BadResponse("missing choices[0].message.content".into()))?;
    let usage = |key: &str| {
        value
            .pointer(&format!("/usage/{key}"))
            .and_then(Value::as_u64)
            .unwrap_or(0)
    };
    Ok(Completion {
        text: text.to_owned(),
        tokens_in: usage("prompt_tokens"),
        tokens_out: usage("completion_tokens"),
    })
}

impl ChatBackend for HttpBackend {
    fn complete(&mut self, messages: &[Message]) -> Result<Completion, LlmError> {
        let body = self.body(messages);
        let mut last = String::new();
        for attempt in 1..=MAX_ATTEMPTS {
            match self.attempt(&body) {
                Ok(completion) => return Ok(completion),
                Err(Failure::Fatal(err)) => return Err(err),
                Err(Failure::Retry(message)) => {
                    tracing::warn!(attempt, %message, "chat request failed");
                    last = message;
                    if attempt < MAX_ATTEMPTS {
                        std::thread::sleep(self.backoff(attempt));
                    }
                }
            }
        }
        Err(LlmError::TransportError {
            attempts: MAX_ATTEMPTS,
            message: last,
        })
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }
}
