//! Thin async client for the inference service.

use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use thiserror::Error;
use tweetsense_core::api::{ErrorBody, HealthResponse, ModelInfo, ModelSelector, PredictionRequest, PredictionResponse};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request to {url} failed: {source}")]
    Transport {
        url: String,
        #[source]
        source: reqwest::Error,
    },
    #[error("service answered {status}: {message}")]
    Status { status: StatusCode, message: String },
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base_url` like `http://127.0.0.1:8080`; a trailing slash is ignored.
    pub fn new(base_url: impl Into<String>) -> Self {
        Client {
            base: base_url.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    pub async fn predict(&self, text: &str, model: ModelSelector) -> Result<Vec<PredictionResponse>, ClientError> {
        let url = format!("{}/predict", self.base);
        let req = self.http.post(&url).json(&PredictionRequest {
            text: text.to_string(),
            model,
        });
        self.finish(url, req).await
    }

    pub async fn models(&self) -> Result<Vec<ModelInfo>, ClientError> {
        let url = format!("{}/models", self.base);
        let req = self.http.get(&url);
        self.finish(url, req).await
    }

    pub async fn health(&self) -> Result<HealthResponse, ClientError> {
        let url = format!("{}/health", self.base);
        let req = self.http.get(&url);
        self.finish(url, req).await
    }

    async fn finish<T: DeserializeOwned>(&self, url: String, req: reqwest::RequestBuilder) -> Result<T, ClientError> {
        let transport = |source| ClientError::Transport { url: url.clone(), source };
        let resp = req.send().await.map_err(transport)?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().await.unwrap_or_default();
            let message = serde_json::from_str::<ErrorBody>(&text).map(|b| b.error).unwrap_or(text);
            return Err(ClientError::Status { status, message });
        }
        resp.json().await.map_err(transport)
    }
}
