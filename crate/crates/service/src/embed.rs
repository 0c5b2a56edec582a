use std::time::Duration;

use eagle_core::Embedding;
use serde::{Deserialize, Serialize};

pub const DEFAULT_EMBED_TIMEOUT_MS: u64 = 5_000;

/// External text-embedding endpoint. Wire format: the client POSTs
/// `{"input": text}` and expects `{"embedding": [f64, ...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingClientConfig {
    pub endpoint_url: String,
    pub timeout_ms: u64,
    pub expected_dim: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("embedding service timed out after {0} ms")]
    Timeout(u64),
    #[error("embedding service request failed: {0}")]
    Request(String),
    #[error("embedding service returned status {0}")]
    Status(u16),
    #[error("embedding service returned an unusable body: {0}")]
    BadResponse(String),
    #[error("embedding service returned dimension {actual}, expected {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
}

#[derive(Debug, Clone)]
pub struct EmbeddingClient {
    cfg: EmbeddingClientConfig,
    http: reqwest::Client,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    input: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    embedding: Vec<f64>,
}

impl EmbeddingClient {
    pub fn new(cfg: EmbeddingClientConfig) -> Result<Self, EmbedError> {
        if cfg.expected_dim == 0 {
            return Err(EmbedError::BadResponse(
                "expected_dim must be positive".into(),
            ));
        }
        let http = reqwest::Client::builder()
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .build()
            .map_err(|e| EmbedError::Request(e.to_string()))?;
        Ok(EmbeddingClient { cfg, http })
    }

    pub fn config(&self) -> &EmbeddingClientConfig {
        &self.cfg
    }

    pub async fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        let resp = self
            .http
            .post(&self.cfg.endpoint_url)
            .json(&EmbedRequest { input: text })
            .send()
            .await
            .map_err(|e| self.request_error(e))?;
        if !resp.status().is_success() {
            return Err(EmbedError::Status(resp.status().as_u16()));
        }
        let body: EmbedResponse = resp.json().await.map_err(|e| {
            if e.is_timeout() {
                EmbedError::Timeout(self.cfg.timeout_ms)
            } else {
                EmbedError::BadResponse(e.to_string())
            }
        })?;
        if body.embedding.len() != self.cfg.expected_dim {
            return Err(EmbedError::DimensionMismatch {
                expected: self.cfg.expected_dim,
                actual: body.embedding.len(),
            });
        }
        Embedding::new(body.embedding).map_err(|e| EmbedError::BadResponse(e.to_string()))
    }

    fn request_error(&self, e: reqwest::Error) -> EmbedError {
        if e.is_timeout() {
            EmbedError::Timeout(self.cfg.timeout_ms)
        } else {
            EmbedError::Request(e.to_string())
        }
    }
}
