//! The proxy itself: pseudonymize outbound user content, forward to the
//! upstream chat-completions endpoint, restore entities in the response.
//!
//! Privacy posture: raw prompt content is never logged; diagnostics carry
//! span counts and stage names only.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use pseudonym::model::contains_word;
use pseudonym::pipeline::{
    pseudonymize_many, restore_output, BackendSet, MappingSession, PipelineConfig, PipelineError,
};
use pseudonym::store::{DirStore, MemoryStore, SessionStore, StoreError};
use serde_json::{json, Value};

use crate::config::AppConfig;
use crate::upstream::{call_upstream, UpstreamPolicy};
use crate::wire::{rewrite_choice_contents, selected_contents, set_content, validate_request};

pub const SESSION_HEADER: &str = "x-pseudo-session";

#[derive(Debug, Clone, Copy, Default)]
pub struct GatewayOptions {
    pub pseudonymize_system: bool,
    pub pseudonymize_assistant: bool,
}

impl GatewayOptions {
    fn roles(&self) -> Vec<&'static str> {
        let mut roles = vec!["user"];
        if self.pseudonymize_system {
            roles.push("system");
        }
        if self.pseudonymize_assistant {
            roles.push("assistant");
        }
        roles
    }
}

struct Inner {
    pipeline: PipelineConfig,
    options: GatewayOptions,
    backends: BackendSet,
    store: Arc<dyn SessionStore>,
    policy: UpstreamPolicy,
    http: reqwest::Client,
    env_api_key: Option<String>,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    pub fn new(
        pipeline: PipelineConfig,
        backends: BackendSet,
        store: Arc<dyn SessionStore>,
        policy: UpstreamPolicy,
        options: GatewayOptions,
    ) -> Self {
        AppState {
            inner: Arc::new(Inner {
                pipeline,
                options,
                backends,
                store,
                policy,
                http: reqwest::Client::new(),
                env_api_key: std::env::var("UPSTREAM_API_KEY").ok(),
            }),
        }
    }

    /// Assemble state from a loaded config file.
    pub fn from_config(config: &AppConfig) -> Result<Self, crate::config::ConfigError> {
        let backends = config.build_backends()?;
        let store: Arc<dyn SessionStore> = match &config.gateway.session_dir {
            Some(dir) => Arc::new(
                DirStore::new(dir.clone())
                    .map_err(|e| crate::config::ConfigError::Invalid(e.to_string()))?,
            ),
            None => Arc::new(MemoryStore::new()),
        };
        let options = GatewayOptions {
            pseudonymize_system: config.gateway.pseudonymize_system,
            pseudonymize_assistant: config.gateway.pseudonymize_assistant,
        };
        Ok(AppState::new(
            config.pipeline.clone(),
            backends,
            store,
            config.upstream.clone(),
            options,
        ))
    }

    pub fn store(&self) -> Arc<dyn SessionStore> {
        self.inner.store.clone()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/chat/completions", post(handle_chat_completion))
        .route("/healthz", get(healthz))
        .with_state(state)
}

/// Bind and serve until the task is aborted.
pub async fn serve(state: AppState, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

async fn healthz() -> &'static str {
    "ok"
}

fn error_response(
    status: StatusCode,
    kind: &str,
    stage: Option<&str>,
    message: String,
) -> Response {
    let mut error = json!({ "type": kind, "message": message });
    if let Some(stage) = stage {
        error["stage"] = Value::String(stage.to_string());
    }
    (status, Json(json!({ "error": error }))).into_response()
}

fn pipeline_error_response(e: &PipelineError) -> Response {
    error_response(
        StatusCode::INTERNAL_SERVER_ERROR,
        "pipeline_error",
        Some(&e.stage().to_string()),
        e.to_string(),
    )
}

async fn handle_chat_completion(
    State(state): State<AppState>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let inner = &state.inner;
    let mut value: Value = match serde_json::from_slice(&body) {
        Ok(value) => value,
        Err(e) => {
            return error_response(
                StatusCode::BAD_REQUEST,
                "invalid_request",
                None,
                format!("body is not valid JSON: {e}"),
            )
        }
    };
    if let Err(e) = validate_request(&value) {
        return error_response(
            StatusCode::BAD_REQUEST,
            "invalid_request",
            None,
            e.to_string(),
        );
    }

    // Session continuation: a prior session's pairs seed this request so the
    // same originals keep the same replacements across turns.
    let prior: Option<MappingSession> =
        match headers.get(SESSION_HEADER).and_then(|v| v.to_str().ok()) {
            Some(id) => match inner.store.get(id) {
                Ok(session) => Some(session),
                Err(StoreError::NotFound(id)) => {
                    return error_response(
                        StatusCode::BAD_REQUEST,
                        "unknown_session",
                        None,
                        format!("session {id:?} not found"),
                    )
                }
                Err(e) => {
                    return error_response(
                        StatusCode::INTERNAL_SERVER_ERROR,
                        "session_store_error",
                        None,
                        e.to_string(),
                    )
                }
            },
            None => None,
        };

    let roles = inner.options.roles();
    let selected = selected_contents(&value, &roles);
    let texts: Vec<String> = selected.iter().map(|(_, t)| t.clone()).collect();
    let seed_pairs = prior
        .as_ref()
        .map(|s| s.mapping.pairs().to_vec())
        .unwrap_or_default();

    let pipeline_config = inner.pipeline.clone();
    let backends = inner.backends.clone();
    let output = match tokio::task::spawn_blocking(move || {
        pseudonymize_many(&texts, &pipeline_config, &backends, &seed_pairs)
    })
    .await
    {
        Ok(Ok(output)) => output,
        Ok(Err(e)) => return pipeline_error_response(&e),
        Err(e) => {
            return error_response(
                StatusCode::INTERNAL_SERVER_ERROR,
                "pipeline_error",
                Some("replacement"),
                format!("pipeline task failed: {e}"),
            )
        }
    };

    for ((index, _), rewritten) in selected.iter().zip(&output.texts) {
        set_content(&mut value, *index, rewritten.text.clone());
    }

    // Final guard on the exact bytes that are about to leave the process.
    let outbound = value.to_string();
    let case_insensitive = inner.pipeline.case_insensitive_detection;
    for pair in output.session.mapping.iter() {
        if contains_word(&outbound, &pair.original, case_insensitive) {
            return pipeline_error_response(&PipelineError::LeakDetected(pair.original.clone()));
        }
    }

    // Replaying the same prompt under the same session keeps the same
    // record; a different prompt chains into a fresh session seeded above.
    let session = match prior {
        Some(prior_session) if prior_session.source_digest == output.session.source_digest => {
            prior_session
        }
        _ => {
            if let Err(e) = inner.store.put(&output.session) {
                return error_response(
                    StatusCode::INTERNAL_SERVER_ERROR,
                    "session_store_error",
                    None,
                    e.to_string(),
                );
            }
            output.session
        }
    };

    tracing::info!(
        spans = output.diagnostics.detected_spans,
        pairs = session.mapping.len(),
        dropped = output.diagnostics.dropped_detections,
        "request pseudonymized"
    );

    let authorization = headers
        .get(axum::http::header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .map(str::to_string)
        .or_else(|| inner.env_api_key.as_ref().map(|k| format!("Bearer {k}")));

    let upstream =
        match call_upstream(&inner.http, &inner.policy, &value, authorization.as_deref()).await {
            Ok(success) => success,
            Err(e) => {
                let status = e.status().unwrap_or(0);
                return error_response(
                    StatusCode::BAD_GATEWAY,
                    "upstream_error",
                    None,
                    format!("last status {status}: {e}"),
                );
            }
        };

    let mut response_body = upstream.body;
    rewrite_choice_contents(&mut response_body, |content| {
        restore_output(content, &session)
    });

    (
        StatusCode::OK,
        [(SESSION_HEADER, session.session_id.clone())],
        Json(response_body),
    )
        .into_response()
}
