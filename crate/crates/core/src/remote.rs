//! JSON-over-HTTP plumbing shared by the remote chat and embedding providers.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Bounded exponential backoff for transient transport failures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay_ms: 250,
        }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        Duration::from_millis(self.base_delay_ms.saturating_mul(1 << attempt.min(10)))
    }
}

#[derive(Debug, Clone)]
pub struct RemoteFailure {
    pub status: Option<u16>,
    pub message: String,
}

fn retryable(status: reqwest::StatusCode) -> bool {
    status.is_server_error() || status == reqwest::StatusCode::TOO_MANY_REQUESTS
}

/// POSTs `body` and returns the decoded JSON response. Transport errors,
/// 429 and 5xx are retried; other statuses fail immediately.
pub(crate) async fn post_json(
    client: &reqwest::Client,
    url: &str,
    api_key: Option<&str>,
    body: &Value,
    retry: RetryPolicy,
) -> Result<Value, RemoteFailure> {
    let attempts = retry.attempts.max(1);
    let mut last = RemoteFailure {
        status: None,
        message: "no attempt made".into(),
    };
    for attempt in 0..attempts {
        if attempt > 0 {
            tokio::time::sleep(retry.delay(attempt - 1)).await;
        }
        let mut req = client.post(url).json(body);
        if let Some(key) = api_key {
            req = req.bearer_auth(key);
        }
        match req.send().await {
            Ok(resp) => {
                let status = resp.status();
                if status.is_success() {
                    return resp.json::<Value>().await.map_err(|e| RemoteFailure {
                        status: Some(status.as_u16()),
                        message: format!("undecodable response body: {e}"),
                    });
                }
                let text = resp.text().await.unwrap_or_default();
                last = RemoteFailure {
                    status: Some(status.as_u16()),
                    message: truncate(&text, 300),
                };
                if !retryable(status) {
                    break;
                }
            }
            Err(e) => {
                last = RemoteFailure {
                    status: None,
                    message: e.to_string(),
                };
            }
        }
        tracing::warn!(url, attempt, status = ?last.status, "remote call failed");
    }
    Err(last)
}

fn truncate(s: &str, max: usize) -> String {
    match s.char_indices().nth(max) {
        Some((i, _)) => format!("{}...", &s[..i]),
        None => s.to_owned(),
    }
}
