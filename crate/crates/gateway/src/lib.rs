//! HTTP gateway for privacy-preserving access to a remote chat-completions
//! service. Outbound user content is pseudonymized, the rewritten request is
//! forwarded upstream, and assistant content in the response is restored
//! from the per-request mapping session.

pub mod app;
pub mod client;
pub mod config;
pub mod upstream;
pub mod wire;

pub use app::{router, serve, AppState, GatewayOptions, SESSION_HEADER};
pub use client::{HttpChatClient, HttpTokenPredictor};
pub use config::AppConfig;
pub use upstream::{call_upstream, UpstreamError, UpstreamPolicy, UpstreamSuccess};
pub use wire::{ChatRequest, ChatResponse, WireMessage};
