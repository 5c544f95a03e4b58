//! Provider abstraction and the HTTP implementation speaking the de-facto
//! chat-completion wire shape.

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Environment variable carrying the provider API key.
pub const API_KEY_ENV: &str = "PAT_DEVAL_API_KEY";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("provider returned status {code}: {body}")]
    Status { code: u16, body: String },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("provider refused the request: {0}")]
    Refusal(String),
    #[error("malformed provider response: {0}")]
    Malformed(String),
}

impl ProviderError {
    /// Worth retrying with backoff?
    pub fn is_transient(&self) -> bool {
        match self {
            ProviderError::Transport(_) => true,
            ProviderError::Status { code, .. } => *code == 429 || *code >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: "system".to_string(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".to_string(),
            content: content.into(),
        }
    }
}

/// Body of `POST {endpoint}/chat/completions`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_p: Option<f64>,
    pub max_tokens: u32,
}

#[async_trait]
pub trait ChatProvider: Send + Sync {
    async fn chat(&self, request: &ChatRequest) -> Result<String, ProviderError>;
}

#[async_trait]
pub trait EmbeddingProvider: Send + Sync {
    async fn embed(&self, input: &str) -> Result<Vec<f64>, ProviderError>;
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ResponseMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Debug, Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
    #[serde(default)]
    refusal: Option<String>,
}

#[derive(Debug, Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Debug, Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: &'a str,
}

/// Client for any server speaking the chat-completion protocol. The API key
/// is read from [`API_KEY_ENV`] unless given explicitly.
pub struct HttpProvider {
    endpoint: String,
    model: String,
    embedding_model: String,
    api_key: Option<String>,
    http: reqwest::Client,
}

impl HttpProvider {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            model: model.into(),
            embedding_model: "text-embedding-3-small".to_string(),
            api_key: std::env::var(API_KEY_ENV).ok(),
            http: reqwest::Client::new(),
        }
    }

    pub fn with_embedding_model(mut self, model: impl Into<String>) -> Self {
        self.embedding_model = model.into();
        self
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    async fn post_json<B: Serialize>(
        &self,
        path: &str,
        body: &B,
    ) -> Result<serde_json::Value, ProviderError> {
        let mut req = self.http.post(format!("{}{path}", self.endpoint)).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let response = req
            .send()
            .await
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = response.status();
        let text = response
            .text()
            .await
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
            return Err(ProviderError::Auth(text));
        }
        if !status.is_success() {
            return Err(ProviderError::Status {
                code: status.as_u16(),
                body: text,
            });
        }
        serde_json::from_str(&text).map_err(|e| ProviderError::Malformed(e.to_string()))
    }
}

#[async_trait]
impl ChatProvider for HttpProvider {
    async fn chat(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let value = self.post_json("/chat/completions", request).await?;
        let parsed: ChatResponse = serde_json::from_value(value)
            .map_err(|e| ProviderError::Malformed(e.to_string()))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| ProviderError::Malformed("empty choices".to_string()))?;
        if let Some(refusal) = choice.message.refusal.filter(|r| !r.is_empty()) {
            return Err(ProviderError::Refusal(refusal));
        }
        if choice.finish_reason.as_deref() == Some("content_filter") {
            return Err(ProviderError::Refusal("content filtered".to_string()));
        }
        choice
            .message
            .content
            .ok_or_else(|| ProviderError::Malformed("missing message content".to_string()))
    }
}

#[async_trait]
impl EmbeddingProvider for HttpProvider {
    async fn embed(&self, input: &str) -> Result<Vec<f64>, ProviderError> {
        let body = EmbeddingRequest {
            model: &self.embedding_model,
            input,
        };
        let value = self.post_json("/embeddings", &body).await?;
        let parsed: EmbeddingResponse = serde_json::from_value(value)
            .map_err(|e| ProviderError::Malformed(e.to_string()))?;
        parsed
            .data
            .into_iter()
            .next()
            .map(|d| d.embedding)
            .ok_or_else(|| ProviderError::Malformed("empty embedding data".to_string()))
    }
}

/// Memoizing wrapper so repeated texts cost one provider call.
pub struct CachedEmbedder {
    inner: std::sync::Arc<dyn EmbeddingProvider>,
    cache: std::sync::Mutex<std::collections::HashMap<String, Vec<f64>>>,
}

impl CachedEmbedder {
    pub fn new(inner: std::sync::Arc<dyn EmbeddingProvider>) -> Self {
        Self {
            inner,
            cache: std::sync::Mutex::new(std::collections::HashMap::new()),
        }
    }
}

#[async_trait]
impl EmbeddingProvider for CachedEmbedder {
    async fn embed(&self, input: &str) -> Result<Vec<f64>, ProviderError> {
        if let Some(hit) = self.cache.lock().unwrap().get(input) {
            return Ok(hit.clone());
        }
        let vector = self.inner.embed(input).await?;
        self.cache
            .lock()
            .unwrap()
            .insert(input.to_string(), vector.clone());
        Ok(vector)
    }
}
