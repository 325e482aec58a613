//! JSON wire types shared by the inference service and its clients.

use serde::{Deserialize, Serialize};

/// Largest accepted `/predict` request body, in bytes.
pub const MAX_BODY_BYTES: usize = 10 * 1024;

/// Response header carrying the server-side handling time of a prediction.
pub const LATENCY_HEADER: &str = "x-latency-ms";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelId {
    Lr,
    Bilstm,
}

impl ModelId {
    pub const ALL: [ModelId; 2] = [ModelId::Lr, ModelId::Bilstm];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelId::Lr => "lr",
            ModelId::Bilstm => "bilstm",
        }
    }
}

impl std::fmt::Display for ModelId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which model(s) a request targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelSelector {
    Lr,
    Bilstm,
    Both,
}

impl ModelSelector {
    pub const VALID: &'static str = "lr, bilstm, both";

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "lr" => Some(ModelSelector::Lr),
            "bilstm" => Some(ModelSelector::Bilstm),
            "both" => Some(ModelSelector::Both),
            _ => None,
        }
    }

    pub fn ids(&self) -> &'static [ModelId] {
        match self {
            ModelSelector::Lr => &[ModelId::Lr],
            ModelSelector::Bilstm => &[ModelId::Bilstm],
            ModelSelector::Both => &ModelId::ALL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRequest {
    pub text: String,
    pub model: ModelSelector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sentiment {
    Negative,
    Positive,
}

impl Sentiment {
    pub fn from_label(label: u8) -> Self {
        if label == 1 {
            Sentiment::Positive
        } else {
            Sentiment::Negative
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResponse {
    pub model: ModelId,
    pub label: Sentiment,
    pub probability_positive: f64,
    /// Tokens after cleaning; for the BiLSTM, only those that fit in the sequence length.
    pub tokens: Vec<String>,
    pub truncated: bool,
    /// The text cleaned down to nothing, so the prediction reflects the bias alone.
    pub degenerate_input: bool,
}

/// One `GET /models` entry, derived from the artifact manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub model: ModelId,
    /// Feature count for the classical model, vocabulary size for the BiLSTM.
    pub vocab_size: usize,
    pub parameter_count: usize,
    pub trained_at: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HealthStatus {
    Ok,
    Degraded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: HealthStatus,
    pub uptime_s: f64,
    pub models_loaded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}
