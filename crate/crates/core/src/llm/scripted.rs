//! Deterministic backend replaying canned responses.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{rough_tokens, ChatBackend, Completion, LlmError, Message, Role};

fn one() -> u32 {
    1
}

/// A canned response, optionally guarded by a substring of the last user
/// message, usable `times` times.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub when: Option<String>,
    #[serde(default = "one")]
    pub times: u32,
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedScript {
    pub responses: Vec<ScriptEntry>,
}

impl ScriptedScript {
    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|err| LlmError::Config(format!("{}: {err}", path.display())))?;
        serde_json::from_str(&text).map_err(|err| LlmError::Config(format!("{}: {err}", path.display())))
    }
}

/// Each call answers with the first entry (in script order) that still has
/// uses left and whose guard matches the last user message. No matching
/// entry is a [`LlmError::ScriptExhausted`] error.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    entries: Vec<ScriptEntry>,
    remaining: Vec<u32>,
    model_id: String,
}

impl ScriptedBackend {
    pub fn new(script: ScriptedScript, model_id: &str) -> Self {
        let remaining = script.responses.iter().map(|e| e.times).collect();
        Self {
            entries: script.responses,
            remaining,
            model_id: model_id.to_owned(),
        }
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&mut self, messages: &[Message]) -> Result<Completion, LlmError> {
        let last_user = messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("");
        let position = self.entries.iter().enumerate().position(|(i, entry)| {
            self.remaining[i] > 0
                && entry
                    .when
                    .as_deref()
                    .is_none_or(|guard| last_user.contains(guard))
        });
        let Some(i) = position else {
            let excerpt: String = last_user.chars().take(120).collect();
            return Err(LlmError::ScriptExhausted { last_user: excerpt });
        };
        self.remaining[i] -= 1;
        let text = self.entries[i].text.clone();
        let tokens_in = messages.iter().map(|m| rough_tokens(&m.content)).sum();
        Ok(Completion {
            tokens_out: rough_tokens(&text),
            tokens_in,
            text,
        })
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }
}
