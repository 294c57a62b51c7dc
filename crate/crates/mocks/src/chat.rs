//! In-process chat client doubles.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use pseudonym::backend::{ChatClient, ChatError, ChatMessage, Role};

/// Shared record of every request a mock saw, in order.
#[derive(Debug, Clone, Default)]
pub struct WireCaptures {
    inner: Arc<Mutex<Vec<Vec<ChatMessage>>>>,
}

impl WireCaptures {
    pub fn record(&self, messages: &[ChatMessage]) {
        self.inner
            .lock()
            .expect("capture lock")
            .push(messages.to_vec());
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("capture lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all(&self) -> Vec<Vec<ChatMessage>> {
        self.inner.lock().expect("capture lock").clone()
    }

    /// Every message content concatenated, for leak assertions.
    pub fn combined_text(&self) -> String {
        self.all()
            .iter()
            .flat_map(|messages| messages.iter().map(|m| m.content.clone()))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Always answers with the last user message content, verbatim.
#[derive(Debug, Clone, Default)]
pub struct EchoChatClient {
    captures: WireCaptures,
}

impl EchoChatClient {
    pub fn new() -> Self {
        EchoChatClient::default()
    }

    pub fn captures(&self) -> WireCaptures {
        self.captures.clone()
    }
}

impl ChatClient for EchoChatClient {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, ChatError> {
        self.captures.record(messages);
        Ok(last_user_content(messages))
    }
}

fn last_user_content(messages: &[ChatMessage]) -> String {
    messages
        .iter()
        .rev()
        .find(|m| m.role == Role::User)
        .map(|m| m.content.clone())
        .unwrap_or_default()
}

/// One scripted reply.
pub enum ChatScriptStep {
    /// Fixed assistant content.
    Content(String),
    /// Echo the last user message.
    Echo,
    /// Fail with an HTTP-style status.
    Fail { status: u16, body: String },
}

impl ChatScriptStep {
    pub fn content(text: impl Into<String>) -> Self {
        ChatScriptStep::Content(text.into())
    }
}

type Predicate = Box<dyn Fn(&[ChatMessage]) -> bool + Send + Sync>;

/// Plays canned replies strictly in order. Exhaustion and predicate
/// mismatches surface as errors, which makes the owning test fail loudly.
pub struct ScriptedChatClient {
    steps: Mutex<VecDeque<(ChatScriptStep, Option<Predicate>)>>,
    captures: WireCaptures,
}

impl ScriptedChatClient {
    pub fn new(steps: impl IntoIterator<Item = ChatScriptStep>) -> Self {
        ScriptedChatClient {
            steps: Mutex::new(steps.into_iter().map(|s| (s, None)).collect()),
            captures: WireCaptures::default(),
        }
    }

    pub fn push(&self, step: ChatScriptStep) {
        self.steps
            .lock()
            .expect("script lock")
            .push_back((step, None));
    }

    pub fn push_with_predicate(
        &self,
        step: ChatScriptStep,
        predicate: impl Fn(&[ChatMessage]) -> bool + Send + Sync + 'static,
    ) {
        self.steps
            .lock()
            .expect("script lock")
            .push_back((step, Some(Box::new(predicate))));
    }

    pub fn captures(&self) -> WireCaptures {
        self.captures.clone()
    }

    pub fn remaining(&self) -> usize {
        self.steps.lock().expect("script lock").len()
    }
}

impl ChatClient for ScriptedChatClient {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, ChatError> {
        self.captures.record(messages);
        let (step, predicate) = self
            .steps
            .lock()
            .expect("script lock")
            .pop_front()
            .ok_or_else(|| ChatError::Other("mock chat script exhausted".into()))?;
        if let Some(predicate) = predicate {
            if !predicate(messages) {
                return Err(ChatError::Other("mock chat predicate mismatch".into()));
            }
        }
        match step {
            ChatScriptStep::Content(text) => Ok(text),
            ChatScriptStep::Echo => Ok(last_user_content(messages)),
            ChatScriptStep::Fail { status, body } => Err(ChatError::Status { status, body }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_returns_last_user_message() {
        let client = EchoChatClient::new();
        let reply = client
            .complete(&[ChatMessage::system("sys"), ChatMessage::user("hello")])
            .unwrap();
        assert_eq!(reply, "hello");
        assert_eq!(client.captures().len(), 1);
    }

    #[test]
    fn script_plays_in_order_and_exhausts() {
        let client = ScriptedChatClient::new([
            ChatScriptStep::Fail {
                status: 503,
                body: "busy".into(),
            },
            ChatScriptStep::Fail {
                status: 503,
                body: "busy".into(),
            },
            ChatScriptStep::Echo,
        ]);
        let messages = [ChatMessage::user("ping")];
        assert!(matches!(
            client.complete(&messages),
            Err(ChatError::Status { status: 503, .. })
        ));
        assert!(matches!(
            client.complete(&messages),
            Err(ChatError::Status { status: 503, .. })
        ));
        assert_eq!(client.complete(&messages).unwrap(), "ping");
        assert!(matches!(
            client.complete(&messages),
            Err(ChatError::Other(_))
        ));
        assert_eq!(client.captures().len(), 4);
    }

    #[test]
    fn predicate_mismatch_fails_loudly() {
        let client = ScriptedChatClient::new([]);
        client.push_with_predicate(ChatScriptStep::content("ok"), |messages| {
            messages.iter().any(|m| m.content.contains("expected"))
        });
        assert!(matches!(
            client.complete(&[ChatMessage::user("something else")]),
            Err(ChatError::Other(_))
        ));
    }
}
