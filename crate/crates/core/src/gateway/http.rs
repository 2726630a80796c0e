use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::header::RETRY_AFTER;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, ChatExchange};

#[derive(Serialize)]
struct Message<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<Message<'a>>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    content: Option<String>,
}

/// Chat-completions client. The API key is held only here and never logged.
pub struct HttpChatBackend {
    client: Client,
    endpoint: String,
    api_key: String,
}

impl std::fmt::Debug for HttpChatBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpChatBackend")
            .field("endpoint", &self.endpoint)
            .finish_non_exhaustive()
    }
}

impl HttpChatBackend {
    pub fn new(
        endpoint: impl Into<String>,
        api_key: impl Into<String>,
        timeout: Duration,
    ) -> Result<Self, BackendError> {
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Fatal(format!("building HTTP client: {e}")))?;
        Ok(HttpChatBackend {
            client,
            endpoint: endpoint.into(),
            api_key: api_key.into(),
        })
    }
}

fn retry_after(headers: &reqwest::header::HeaderMap) -> Option<Duration> {
    headers
        .get(RETRY_AFTER)?
        .to_str()
        .ok()?
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|s| s.is_finite() && *s >= 0.0)
        .map(Duration::from_secs_f64)
}

fn error_chain(e: &dyn std::error::Error) -> String {
    let mut out = e.to_string();
    let mut cur = e.source();
    while let Some(s) = cur {
        out.push_str(": ");
        out.push_str(&s.to_string());
        cur = s.source();
    }
    out
}

impl ChatBackend for HttpChatBackend {
    fn send(&self, model: &str, exchange: &ChatExchange) -> Result<String, BackendError> {
        let mut messages = Vec::with_capacity(2);
        if !exchange.system_text.is_empty() {
            messages.push(Message {
                role: "system",
                content: &exchange.system_text,
            });
        }
        messages.push(Message {
            role: "user",
            content: &exchange.user_text,
        });
        let body = ChatRequest {
            model,
            messages,
            temperature: exchange.params.temperature,
            max_tokens: exchange.params.max_output_tokens,
        };
        let resp = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| BackendError::Transient {
                status: None,
                message: format!("request failed: {}", error_chain(&e)),
                retry_after: None,
            })?;

        let status = resp.status();
        if status == StatusCode::UNAUTHORIZED || status == StatusCode::FORBIDDEN {
            return Err(BackendError::Auth(format!("HTTP {}", status.as_u16())));
        }
        if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
            let wait = retry_after(resp.headers());
            let text = resp.text().unwrap_or_default();
            return Err(BackendError::Transient {
                status: Some(status.as_u16()),
                message: truncate(&text, 200),
                retry_after: wait,
            });
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(BackendError::Fatal(format!(
                "HTTP {}: {}",
                status.as_u16(),
                truncate(&text, 200)
            )));
        }
        let parsed: ChatResponse = resp.json().map_err(|e| BackendError::Transient {
            status: Some(status.as_u16()),
            message: format!("malformed response body: {e}"),
            retry_after: None,
        })?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::Fatal("response has no message content".into()))
    }

    fn name(&self) -> &str {
        "http"
    }
}

fn truncate(s: &str, max_chars: usize) -> String {
    s.chars().take(max_chars).collect()
}
