//! Chat gateway over interchangeable backends, with round caps, budget
//! accounting and transcript persistence.

pub mod http;
pub mod scripted;
pub mod transcript;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{BackendKind, LlmBackendConfig};
use crate::ledger::BudgetLedger;

pub use http::HttpBackend;
pub use scripted::{ScriptEntry, ScriptedBackend, ScriptedScript};
pub use transcript::persist_transcript;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("conversation reached its round cap of {cap}")]
    RoundCapExceeded { cap: usize },
    #[error("scripted backend has no response left for: {last_user}")]
    ScriptExhausted { last_user: String },
    #[error("transport failed after {attempts} attempts: {message}")]
    TransportError { attempts: u32, message: String },
    #[error("invalid backend configuration: {0}")]
    Config(String),
    #[error("unexpected response from backend: {0}")]
    BadResponse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
    pub timestamp: String,
}

impl Message {
    fn now(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
        }
    }
}

/// Ordered messages starting with the system prompt. One round is one
/// assistant message.
#[derive(Debug, Clone, PartialEq)]
pub struct Conversation {
    messages: Vec<Message>,
    cap: usize,
}

impl Conversation {
    pub fn new(system: impl Into<String>, cap: usize) -> Self {
        Self {
            messages: vec![Message::now(Role::System, system)],
            cap,
        }
    }

    pub fn push_user(&mut self, text: impl Into<String>) {
        self.messages.push(Message::now(Role::User, text));
    }

    fn push_assistant(&mut self, text: impl Into<String>) -> &Message {
        self.messages.push(Message::now(Role::Assistant, text));
        self.messages.last().expect("just pushed")
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn round_count(&self) -> usize {
        self.messages.iter().filter(|m| m.role == Role::Assistant).count()
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn at_cap(&self) -> bool {
        self.round_count() >= self.cap
    }

    pub fn last_user(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
    }
}

/// One backend reply with token usage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub tokens_in: u64,
    pub tokens_out: u64,
}

pub trait ChatBackend: Send {
    fn complete(&mut self, messages: &[Message]) -> Result<Completion, LlmError>;
    fn model_id(&self) -> &str;
}

pub struct LlmGateway {
    backend: Box<dyn ChatBackend>,
    ledger: Arc<BudgetLedger>,
}

impl LlmGateway {
    pub fn new(backend: Box<dyn ChatBackend>, ledger: Arc<BudgetLedger>) -> Self {
        Self { backend, ledger }
    }

    pub fn from_config(cfg: &LlmBackendConfig, ledger: Arc<BudgetLedger>) -> Result<Self, LlmError> {
        let backend: Box<dyn ChatBackend> = match cfg.kind {
            BackendKind::Scripted => {
                let path = cfg
                    .script_path
                    .as_ref()
                    .ok_or_else(|| LlmError::Config("scripted backend needs script_path".into()))?;
                Box::new(ScriptedBackend::new(ScriptedScript::load(path)?, &cfg.model_id))
            }
            BackendKind::Http => Box::new(HttpBackend::from_config(cfg)?),
        };
        Ok(Self::new(backend, ledger))
    }

    pub fn model_id(&self) -> &str {
        self.backend.model_id()
    }

    pub fn ledger(&self) -> &Arc<BudgetLedger> {
        &self.ledger
    }

    /// Sends the conversation and appends the assistant reply to it.
    pub fn chat(&mut self, conversation: &mut Conversation) -> Result<Message, LlmError> {
        if conversation.at_cap() {
            return Err(LlmError::RoundCapExceeded {
                cap: conversation.cap(),
            });
        }
        let completion = self.backend.complete(conversation.messages())?;
        self.ledger
            .record_llm_call(completion.tokens_in, completion.tokens_out);
        Ok(conversation.push_assistant(completion.text).clone())
    }
}

/// Whitespace token count; the scripted backend's usage estimate.
pub(crate) fn rough_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}
