//! Deterministic test doubles: scripted chat clients, scripted token
//! predictors, and a loopback chat-completions HTTP server. Everything runs
//! offline and records wire captures so tests can assert what actually left
//! the process.

mod chat;
mod predictor;
mod server;

pub use chat::{ChatScriptStep, EchoChatClient, ScriptedChatClient, WireCaptures};
pub use predictor::{PerfectPredictor, ScoredPredictor, ScriptedPredictor, UniformPredictor};
pub use server::{spawn_upstream, MockUpstream, UpstreamScriptStep};
