//! Upstream chat-completions client with bounded retries and exponential
//! backoff. Retries fire on 5xx statuses, timeouts, and transport failures;
//! 4xx statuses never retry.

use std::time::Duration;

use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct UpstreamPolicy {
    pub base_url: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_base_ms")]
    pub backoff_base_ms: u64,
    /// Model name used when this process originates upstream requests (the
    /// eval runner). The gateway proxies the client's model untouched.
    #[serde(default = "default_model")]
    pub model: String,
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_model() -> String {
    "cloud-large".to_string()
}

fn default_max_retries() -> u32 {
    2
}

fn default_backoff_base_ms() -> u64 {
    250
}

impl UpstreamPolicy {
    pub fn new(base_url: impl Into<String>) -> Self {
        UpstreamPolicy {
            base_url: base_url.into(),
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            backoff_base_ms: default_backoff_base_ms(),
            model: default_model(),
        }
    }

    pub fn completions_url(&self) -> String {
        format!(
            "{}/v1/chat/completions",
            self.base_url.trim_end_matches('/')
        )
    }

    /// Delay before retry number `attempt` (0-based): `base × 2^attempt`.
    pub fn backoff_delay(&self, attempt: u32) -> Duration {
        Duration::from_millis(self.backoff_base_ms.saturating_mul(1 << attempt.min(16)))
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.timeout_ms == 0 {
            return Err("upstream timeout_ms must be > 0".into());
        }
        if self.base_url.is_empty() {
            return Err("upstream base_url must be set".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum UpstreamError {
    #[error("upstream returned status {status} after {attempts} attempt(s): {body}")]
    Status {
        status: u16,
        body: String,
        attempts: u32,
    },
    #[error("upstream timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("upstream transport failure after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },
    #[error("upstream response is not valid JSON: {0}")]
    BadBody(String),
}

impl UpstreamError {
    pub fn status(&self) -> Option<u16> {
        match self {
            UpstreamError::Status { status, .. } => Some(*status),
            _ => None,
        }
    }
}

/// Result of a successful upstream call, including the retry trace so
/// callers and tests can audit the backoff schedule.
#[derive(Debug)]
pub struct UpstreamSuccess {
    pub body: Value,
    pub attempts: u32,
    pub delays: Vec<Duration>,
}

enum AttemptFailure {
    Retryable(UpstreamError),
    Fatal(UpstreamError),
}

/// POST the request body to the upstream chat-completions endpoint.
pub async fn call_upstream(
    client: &reqwest::Client,
    policy: &UpstreamPolicy,
    body: &Value,
    authorization: Option<&str>,
) -> Result<UpstreamSuccess, UpstreamError> {
    let url = policy.completions_url();
    let mut delays = Vec::new();
    let mut attempts = 0;
    loop {
        attempts += 1;
        match attempt(client, &url, policy, body, authorization, attempts).await {
            Ok(value) => {
                return Ok(UpstreamSuccess {
                    body: value,
                    attempts,
                    delays,
                })
            }
            Err(AttemptFailure::Fatal(e)) => return Err(e),
            Err(AttemptFailure::Retryable(e)) => {
                if attempts > policy.max_retries {
                    return Err(e);
                }
                let delay = policy.backoff_delay(attempts - 1);
                delays.push(delay);
                tokio::time::sleep(delay).await;
            }
        }
    }
}

async fn attempt(
    client: &reqwest::Client,
    url: &str,
    policy: &UpstreamPolicy,
    body: &Value,
    authorization: Option<&str>,
    attempts: u32,
) -> Result<Value, AttemptFailure> {
    let mut request = client
        .post(url)
        .timeout(Duration::from_millis(policy.timeout_ms))
        .json(body);
    if let Some(auth) = authorization {
        request = request.header(reqwest::header::AUTHORIZATION, auth);
    }
    match request.send().await {
        Ok(response) => {
            let status = response.status();
            if status.is_success() {
                response
                    .json::<Value>()
                    .await
                    .map_err(|e| AttemptFailure::Fatal(UpstreamError::BadBody(e.to_string())))
            } else {
                let body = response.text().await.unwrap_or_default();
                let error = UpstreamError::Status {
                    status: status.as_u16(),
                    body,
                    attempts,
                };
                if status.is_server_error() {
                    Err(AttemptFailure::Retryable(error))
                } else {
                    Err(AttemptFailure::Fatal(error))
                }
            }
        }
        Err(e) if e.is_timeout() => Err(AttemptFailure::Retryable(UpstreamError::Timeout {
            attempts,
        })),
        Err(e) => Err(AttemptFailure::Retryable(UpstreamError::Transport {
            message: e.to_string(),
            attempts,
        })),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_per_attempt() {
        let policy = UpstreamPolicy {
            base_url: "http://x".into(),
            timeout_ms: 100,
            max_retries: 3,
            backoff_base_ms: 250,
            model: "cloud-large".into(),
        };
        assert_eq!(policy.backoff_delay(0), Duration::from_millis(250));
        assert_eq!(policy.backoff_delay(1), Duration::from_millis(500));
        assert_eq!(policy.backoff_delay(2), Duration::from_millis(1000));
    }

    #[test]
    fn url_join_trims_slash() {
        assert_eq!(
            UpstreamPolicy::new("http://h:1/").completions_url(),
            "http://h:1/v1/chat/completions"
        );
    }
}
