//! Chat-completions wire format. The proxy edits requests as raw
//! `serde_json::Value` trees so unknown fields survive byte-for-byte; the
//! typed structs exist for clients and tests that build messages.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    pub role: String,
    pub content: String,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl WireMessage {
    pub fn new(role: impl Into<String>, content: impl Into<String>) -> Self {
        WireMessage {
            role: role.into(),
            content: content.into(),
            extra: Map::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<WireMessage>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, messages: Vec<WireMessage>) -> Self {
        ChatRequest {
            model: model.into(),
            messages,
            extra: Map::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatChoice {
    pub message: WireMessage,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub choices: Vec<ChatChoice>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl ChatResponse {
    /// Content of the first choice, the common read path.
    pub fn primary_content(&self) -> Option<&str> {
        self.choices.first().map(|c| c.message.content.as_str())
    }
}

pub const ALLOWED_ROLES: [&str; 3] = ["system", "user", "assistant"];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RequestError {
    #[error("request body is not valid JSON: {0}")]
    NotJson(String),
    #[error("request must carry a string `model` field")]
    MissingModel,
    #[error("request must carry a non-empty `messages` array")]
    MissingMessages,
    #[error("message {index} is malformed: {reason}")]
    BadMessage { index: usize, reason: String },
}

/// Validate the subset of the chat-completions schema the proxy relies on:
/// a model string and a non-empty message list with allowed roles and
/// string contents. The value itself stays untouched.
pub fn validate_request(value: &Value) -> Result<(), RequestError> {
    if !value.get("model").is_some_and(Value::is_string) {
        return Err(RequestError::MissingModel);
    }
    let messages = value
        .get("messages")
        .and_then(Value::as_array)
        .filter(|m| !m.is_empty())
        .ok_or(RequestError::MissingMessages)?;
    for (index, message) in messages.iter().enumerate() {
        let role = message.get("role").and_then(Value::as_str).ok_or_else(|| {
            RequestError::BadMessage {
                index,
                reason: "missing string `role`".into(),
            }
        })?;
        if !ALLOWED_ROLES.contains(&role) {
            return Err(RequestError::BadMessage {
                index,
                reason: format!("role {role:?} not in {ALLOWED_ROLES:?}"),
            });
        }
        if !message.get("content").is_some_and(Value::is_string) {
            return Err(RequestError::BadMessage {
                index,
                reason: "missing string `content`".into(),
            });
        }
    }
    Ok(())
}

/// Indices and contents of the messages whose roles are selected.
pub fn selected_contents(value: &Value, roles: &[&str]) -> Vec<(usize, String)> {
    value
        .get("messages")
        .and_then(Value::as_array)
        .map(|messages| {
            messages
                .iter()
                .enumerate()
                .filter(|(_, m)| {
                    m.get("role")
                        .and_then(Value::as_str)
                        .is_some_and(|r| roles.contains(&r))
                })
                .filter_map(|(i, m)| {
                    m.get("content")
                        .and_then(Value::as_str)
                        .map(|c| (i, c.to_string()))
                })
                .collect()
        })
        .unwrap_or_default()
}

/// Overwrite the content of message `index` in place.
pub fn set_content(value: &mut Value, index: usize, content: String) {
    if let Some(message) = value
        .get_mut("messages")
        .and_then(Value::as_array_mut)
        .and_then(|m| m.get_mut(index))
    {
        message["content"] = Value::String(content);
    }
}

/// Apply `restore` to every choice message content in a response.
pub fn rewrite_choice_contents(value: &mut Value, restore: impl Fn(&str) -> String) {
    if let Some(choices) = value.get_mut("choices").and_then(Value::as_array_mut) {
        for choice in choices {
            if let Some(content) = choice.get_mut("message").and_then(|m| m.get_mut("content")) {
                if let Some(text) = content.as_str() {
                    *content = Value::String(restore(text));
                }
            }
        }
    }
}
