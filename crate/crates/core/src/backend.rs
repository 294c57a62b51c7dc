//! Abstract backends the pipeline stages call into: a chat-completion
//! client for prompt-based stages and a next-token predictor for the
//! generative replacer. Real network clients and in-process test doubles
//! implement the same traits.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ChatError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("upstream returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("{0}")]
    Other(String),
}

/// A chat-completion backend. Implementations must be safe to call from
/// multiple threads; the pipeline shares one client across stages.
pub trait ChatClient: Send + Sync {
    /// Send one conversation and return the assistant's reply content.
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, ChatError>;
}

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("token id {0} out of vocabulary")]
    UnknownToken(usize),
    #[error("{0}")]
    Other(String),
}

/// Next-token predictor driving the generative replacer and the semantic
/// correctness score.
///
/// Token ids index into `vocab()`. The vocabulary is owned by the predictor
/// and growable: callers intern replacement tokens through `token_id` before
/// splicing them into a prefix, so implementations that condition on the
/// prefix can always recover its surface form. `next` returns a probability
/// distribution over the current vocabulary (summing to 1 within 1e-9);
/// `score` returns the negative log-probability of one token after the
/// prefix.
pub trait TokenPredictor {
    fn vocab(&self) -> &[String];

    /// Id of the end-of-sequence token.
    fn eos_id(&self) -> usize;

    /// Return the id for `token`, interning it if previously unseen.
    fn token_id(&mut self, token: &str) -> usize;

    fn next(&mut self, prefix: &[usize], conditioning: &str) -> Result<Vec<f64>, PredictError>;

    fn score(&mut self, prefix: &[usize], token_id: usize) -> Result<f64, PredictError>;
}

/// Index of the highest-probability token; ties go to the lowest id.
pub fn argmax(distribution: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in distribution.iter().enumerate() {
        if p > distribution[best] {
            best = i;
        }
    }
    debug_assert!(
        (distribution.iter().sum::<f64>() - 1.0).abs() < 1e-6,
        "predictor distribution must sum to 1"
    );
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.25, 0.25, 0.5]), 2);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }
}
