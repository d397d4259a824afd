//! Chat-completion providers.

mod analyst;
mod scripted;

use std::fmt::Write as _;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::remote::{self, RetryPolicy};

pub use analyst::FixtureAnalyst;
pub use scripted::{Matcher, Reply, ScriptedProvider};

pub const CHAT_API_KEY_ENV: &str = "QA_CHAT_API_KEY";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: ChatRole::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: ChatRole::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: ChatRole::Assistant,
            content: content.into(),
        }
    }
}

/// Flattens a message sequence into one deterministic text block.
pub fn render_messages(messages: &[ChatMessage]) -> String {
    let mut out = String::new();
    for (i, m) in messages.iter().enumerate() {
        if i > 0 {
            out.push_str("\n\n");
        }
        let role = match m.role {
            ChatRole::System => "SYSTEM",
            ChatRole::User => "USER",
            ChatRole::Assistant => "ASSISTANT",
        };
        let _ = write!(out, "### {role}\n{}", m.content);
    }
    out
}

#[derive(Debug, Clone, Error)]
pub enum LlmError {
    #[error("language model unavailable{}: {message}", status.map(|s| format!(" (status {s})")).unwrap_or_default())]
    Unavailable { status: Option<u16>, message: String },
    /// Scripted provider had no rule for the prompt.
    #[error("unmatched prompt: {0}")]
    UnmatchedPrompt(String),
}

#[async_trait]
pub trait ChatProvider: Send + Sync {
    fn name(&self) -> &str;
    async fn complete(&self, messages: &[ChatMessage]) -> Result<String, LlmError>;
}

/// OpenAI-compatible `/chat/completions` endpoint.
pub struct RemoteChat {
    client: reqwest::Client,
    url: String,
    model: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    name: String,
}

impl RemoteChat {
    /// Reads the credential from `QA_CHAT_API_KEY`.
    pub fn from_env(base_url: &str, model: &str, retry: RetryPolicy) -> Self {
        Self::new(base_url, model, std::env::var(CHAT_API_KEY_ENV).ok(), retry)
    }

    pub fn new(base_url: &str, model: &str, api_key: Option<String>, retry: RetryPolicy) -> Self {
        let base = base_url.trim_end_matches('/');
        let url = if base.ends_with("/chat/completions") {
            base.to_owned()
        } else {
            format!("{base}/chat/completions")
        };
        Self {
            client: reqwest::Client::builder()
                .timeout(std::time::Duration::from_secs(120))
                .build()
                .unwrap_or_default(),
            url,
            model: model.to_owned(),
            api_key,
            retry,
            name: format!("remote:{model}"),
        }
    }
}

#[async_trait]
impl ChatProvider for RemoteChat {
    fn name(&self) -> &str {
        &self.name
    }

    async fn complete(&self, messages: &[ChatMessage]) -> Result<String, LlmError> {
        let body = json!({
            "model": self.model,
            "messages": messages,
            "temperature": 0,
        });
        let resp = remote::post_json(&self.client, &self.url, self.api_key.as_deref(), &body, self.retry)
            .await
            .map_err(|f| LlmError::Unavailable {
                status: f.status,
                message: f.message,
            })?;
        resp.pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .map(str::to_owned)
            .ok_or_else(|| LlmError::Unavailable {
                status: None,
                message: "response carried no message content".into(),
            })
    }
}
