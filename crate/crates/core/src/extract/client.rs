use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::prompt::PromptPayload;

fn default_timeout() -> u64 {
    60
}
fn default_retries() -> u32 {
    3
}
fn default_parallelism() -> usize {
    4
}
fn default_backoff() -> u64 {
    500
}
fn default_max_backoff() -> u64 {
    16_000
}

/// Endpoint settings, as read from the endpoint config file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmEndpointConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// Re-prompts after a rejected answer; also the transport retry budget.
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
    #[serde(default = "default_max_backoff")]
    pub max_backoff_ms: u64,
}

impl LlmEndpointConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        LlmEndpointConfig {
            base_url: base_url.into(),
            model: model.into(),
            auth_env: None,
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            parallelism: default_parallelism(),
            backoff_ms: default_backoff(),
            max_backoff_ms: default_max_backoff(),
        }
    }

    pub fn validate(&self) -> Result<(), TransportError> {
        if self.parallelism == 0 {
            return Err(TransportError::Config("parallelism must be at least 1".into()));
        }
        if self.base_url.trim().is_empty() {
            return Err(TransportError::Config("base_url is empty".into()));
        }
        Ok(())
    }

    /// Delay before transport retry `attempt` (0-based), doubling and capped.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let ms = self.backoff_ms.saturating_mul(1u64 << attempt.min(20));
        Duration::from_millis(ms.min(self.max_backoff_ms))
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum TransportError {
    #[error("endpoint unreachable: {0}")]
    Unreachable(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("endpoint answered HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("response has no message content: {0}")]
    BadResponse(String),
    #[error("invalid endpoint config: {0}")]
    Config(String),
}

/// Anything that turns a prompt into the raw text of one completion.
#[async_trait]
pub trait ChatBackend: Send + Sync {
    async fn complete(&self, payload: &PromptPayload) -> Result<String, TransportError>;
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn new(model: &str, payload: &PromptPayload) -> Self {
        let mut messages = Vec::with_capacity(2);
        if let Some(system) = &payload.system_text {
            messages.push(ChatMessage {
                role: "system".into(),
                content: system.clone(),
            });
        }
        messages.push(ChatMessage {
            role: "user".into(),
            content: payload.user_text.clone(),
        });
        ChatRequest {
            model: model.to_owned(),
            messages,
            temperature: payload.decoding.temperature,
            max_tokens: payload.decoding.max_tokens,
        }
    }
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    #[serde(default)]
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Debug, Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

/// Chat-completions client over HTTP.
#[derive(Debug, Clone)]
pub struct HttpChatClient {
    http: reqwest::Client,
    url: String,
    token: Option<String>,
    config: LlmEndpointConfig,
}

impl HttpChatClient {
    /// Resolves the token variable; a named but unset variable is an auth failure.
    pub fn new(config: LlmEndpointConfig) -> Result<Self, TransportError> {
        config.validate()?;
        let token = match &config.auth_env {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| TransportError::Auth(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs.max(1)))
            .build()
            .map_err(|e| TransportError::Config(e.to_string()))?;
        let url = format!("{}/chat/completions", config.base_url.trim_end_matches('/'));
        Ok(HttpChatClient { http, url, token, config })
    }

    pub fn config(&self) -> &LlmEndpointConfig {
        &self.config
    }

    async fn send_once(&self, body: &ChatRequest) -> Result<String, Attempt> {
        let mut req = self.http.post(&self.url).json(body);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req
            .send()
            .await
            .map_err(|e| Attempt::Retry(TransportError::Unreachable(e.to_string())))?;
        let status = resp.status();
        if status.is_success() {
            let text = resp
                .text()
                .await
                .map_err(|e| Attempt::Retry(TransportError::Unreachable(e.to_string())))?;
            return decode_response(&text).map_err(Attempt::Fatal);
        }
        let code = status.as_u16();
        let body = resp.text().await.unwrap_or_default();
        let err = TransportError::Rejected { status: code, body };
        match code {
            401 | 403 => Err(Attempt::Fatal(TransportError::Auth(format!("HTTP {code}")))),
            408 | 429 | 500..=599 => Err(Attempt::Retry(err)),
            _ => Err(Attempt::Fatal(err)),
        }
    }
}

enum Attempt {
    Retry(TransportError),
    Fatal(TransportError),
}

/// Extracts the first choice's message content from a response body.
pub fn decode_response(body: &str) -> Result<String, TransportError> {
    let parsed: ChatResponse = serde_json::from_str(body).map_err(|e| TransportError::BadResponse(e.to_string()))?;
    parsed
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .ok_or_else(|| TransportError::BadResponse("no choices[0].message.content".into()))
}

#[async_trait]
impl ChatBackend for HttpChatClient {
    async fn complete(&self, payload: &PromptPayload) -> Result<String, TransportError> {
        let body = ChatRequest::new(&self.config.model, payload);
        let mut attempt = 0;
        loop {
            match self.send_once(&body).await {
                Ok(content) => return Ok(content),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(e)) => {
                    if attempt >= self.config.max_retries {
                        return Err(match e {
                            TransportError::Rejected { .. } => e,
                            other => TransportError::Unreachable(other.to_string()),
                        });
                    }
                    let delay = self.config.backoff(attempt);
                    tracing::warn!(error = %e, attempt, ?delay, "retrying chat completion");
                    tokio::time::sleep(delay).await;
                    attempt += 1;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::prompt::Decoding;

    #[test]
    fn config_defaults() {
        let cfg: LlmEndpointConfig =
            serde_json::from_str(r#"{"base_url":"http://localhost:1/v1","model":"m"}"#).unwrap();
        assert_eq!(cfg.max_retries, 3);
        assert!(cfg.parallelism >= 1);
        assert_eq!(cfg.auth_env, None);
        let mut bad = cfg.clone();
        bad.parallelism = 0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let mut cfg = LlmEndpointConfig::new("http://x", "m");
        cfg.backoff_ms = 100;
        cfg.max_backoff_ms = 350;
        let d: Vec<u128> = (0..4).map(|a| cfg.backoff(a).as_millis()).collect();
        assert_eq!(d, vec![100, 200, 350, 350]);
    }

    #[test]
    fn request_shape() {
        let p = PromptPayload {
            system_text: None,
            user_text: "hi".into(),
            decoding: Decoding { temperature: 0.0, max_tokens: 416 },
        };
        let v = serde_json::to_value(ChatRequest::new("gpt-4o", &p)).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"model":"gpt-4o","messages":[{"role":"user","content":"hi"}],"temperature":0.0,"max_tokens":416})
        );
    }

    #[test]
    fn response_decoding() {
        assert_eq!(decode_response(r#"{"choices":[{"message":{"role":"assistant","content":"{}"}}]}"#).unwrap(), "{}");
        assert!(decode_response(r#"{"choices":[]}"#).is_err());
        assert!(decode_response("nope").is_err());
    }

    #[test]
    fn unset_token_variable_is_auth_failure() {
        let mut cfg = LlmEndpointConfig::new("http://localhost:9", "m");
        cfg.auth_env = Some("RADLABEL_TEST_TOKEN_THAT_IS_NOT_SET".into());
        assert!(matches!(HttpChatClient::new(cfg), Err(TransportError::Auth(_))));
    }
}
