//! Loopback chat-completions server for wire-level tests. Speaks the same
//! JSON subset as the gateway's upstream and records every raw request body.

use std::collections::VecDeque;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::IntoResponse;
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use tokio::task::JoinHandle;

/// One scripted upstream response.
#[derive(Debug, Clone)]
pub enum UpstreamScriptStep {
    /// Respond with this HTTP status and a small error body.
    Status(u16),
    /// 200 with the last user message echoed as assistant content.
    Echo,
    /// 200 with fixed assistant content.
    Content(String),
}

#[derive(Clone)]
struct ServerState {
    // None = echo every request; Some = finite script, exhaustion is an error.
    script: Arc<Mutex<Option<VecDeque<UpstreamScriptStep>>>>,
    captures: Arc<Mutex<Vec<Value>>>,
}

/// Handle to a running mock upstream.
pub struct MockUpstream {
    pub addr: SocketAddr,
    state: ServerState,
    handle: JoinHandle<()>,
}

impl MockUpstream {
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Raw JSON bodies of every request received, in order.
    pub fn captured_bodies(&self) -> Vec<Value> {
        self.state.captures.lock().expect("capture lock").clone()
    }

    pub fn request_count(&self) -> usize {
        self.state.captures.lock().expect("capture lock").len()
    }

    /// All captured bodies serialized, for leak assertions.
    pub fn captured_text(&self) -> String {
        self.captured_bodies()
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

impl Drop for MockUpstream {
    fn drop(&mut self) {
        self.handle.abort();
    }
}

/// Spawn the mock on an ephemeral local port. `script: None` echoes forever.
pub async fn spawn_upstream(script: Option<Vec<UpstreamScriptStep>>) -> MockUpstream {
    let state = ServerState {
        script: Arc::new(Mutex::new(script.map(VecDeque::from))),
        captures: Arc::new(Mutex::new(Vec::new())),
    };
    let app = Router::new()
        .route("/v1/chat/completions", post(handle_completion))
        .with_state(state.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0")
        .await
        .expect("bind loopback");
    let addr = listener.local_addr().expect("local addr");
    let handle = tokio::spawn(async move {
        axum::serve(listener, app)
            .await
            .expect("mock upstream serve");
    });
    MockUpstream {
        addr,
        state,
        handle,
    }
}

async fn handle_completion(
    State(state): State<ServerState>,
    Json(body): Json<Value>,
) -> impl IntoResponse {
    state
        .captures
        .lock()
        .expect("capture lock")
        .push(body.clone());
    let step = {
        let mut script = state.script.lock().expect("script lock");
        match script.as_mut() {
            None => UpstreamScriptStep::Echo,
            Some(steps) => match steps.pop_front() {
                Some(step) => step,
                None => {
                    return (
                        StatusCode::from_u16(599).expect("valid status"),
                        Json(json!({"error": "mock upstream script exhausted"})),
                    )
                }
            },
        }
    };
    match step {
        UpstreamScriptStep::Status(code) => (
            StatusCode::from_u16(code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR),
            Json(json!({"error": {"message": "scripted failure", "code": code}})),
        ),
        UpstreamScriptStep::Echo => {
            let content = last_user_content(&body);
            (StatusCode::OK, Json(completion_response(&body, content)))
        }
        UpstreamScriptStep::Content(content) => {
            (StatusCode::OK, Json(completion_response(&body, content)))
        }
    }
}

fn last_user_content(body: &Value) -> String {
    body.get("messages")
        .and_then(Value::as_array)
        .and_then(|messages| {
            messages
                .iter()
                .rev()
                .find(|m| m.get("role").and_then(Value::as_str) == Some("user"))
        })
        .and_then(|m| m.get("content"))
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string()
}

fn completion_response(request: &Value, content: String) -> Value {
    json!({
        "id": "chatcmpl-mock",
        "object": "chat.completion",
        "model": request.get("model").and_then(Value::as_str).unwrap_or("mock"),
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": content},
            "finish_reason": "stop"
        }]
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[tokio::test]
    async fn echo_server_round_trip() {
        let upstream = spawn_upstream(None).await;
        let client = reqwest_lite(&upstream.base_url()).await;
        let body = json!({
            "model": "m",
            "messages": [{"role": "user", "content": "hello wire"}]
        });
        let response = client(body.clone()).await;
        assert_eq!(
            response["choices"][0]["message"]["content"],
            Value::String("hello wire".into())
        );
        assert_eq!(upstream.request_count(), 1);
        assert_eq!(upstream.captured_bodies()[0], body);
    }

    #[tokio::test]
    async fn scripted_statuses_then_exhaustion() {
        let upstream = spawn_upstream(Some(vec![
            UpstreamScriptStep::Status(503),
            UpstreamScriptStep::Echo,
        ]))
        .await;
        let url = format!("{}/v1/chat/completions", upstream.base_url());
        let body = json!({"model": "m", "messages": [{"role": "user", "content": "x"}]});

        let status = raw_post(&url, &body).await.0;
        assert_eq!(status, 503);
        let (status, _) = raw_post(&url, &body).await;
        assert_eq!(status, 200);
        let (status, text) = raw_post(&url, &body).await;
        assert_eq!(status, 599);
        assert!(text.contains("exhausted"));
    }

    // Tiny HTTP client over tokio's TcpStream; avoids pulling an HTTP client
    // crate into the mock's own tests.
    async fn raw_post(url: &str, body: &Value) -> (u16, String) {
        use tokio::io::{AsyncReadExt, AsyncWriteExt};
        let without_scheme = url.strip_prefix("http://").expect("http url");
        let (host, path) = without_scheme.split_once('/').expect("path");
        let payload = body.to_string();
        let request = format!(
            "POST /{path} HTTP/1.1\r\nHost: {host}\r\nContent-Type: application/json\r\n\
Content-Length: {}\r\nConnection: close\r\n\r\n{payload}",
            payload.len()
        );
        let mut stream = tokio::net::TcpStream::connect(host).await.expect("connect");
        stream.write_all(request.as_bytes()).await.expect("write");
        let mut response = String::new();
        stream.read_to_string(&mut response).await.expect("read");
        let status: u16 = response
            .split_whitespace()
            .nth(1)
            .and_then(|s| s.parse().ok())
            .expect("status");
        (status, response)
    }

    async fn raw_json(url: &str, body: &Value) -> Value {
        let (_, response) = raw_post(url, body).await;
        let json_start = response.find("\r\n\r\n").expect("header break") + 4;
        serde_json::from_str(&response[json_start..]).expect("json body")
    }

    async fn reqwest_lite(
        base: &str,
    ) -> impl Fn(Value) -> std::pin::Pin<Box<dyn std::future::Future<Output = Value>>> {
        let url = format!("{base}/v1/chat/completions");
        move |body: Value| {
            let url = url.clone();
            Box::pin(async move { raw_json(&url, &body).await })
        }
    }
}
