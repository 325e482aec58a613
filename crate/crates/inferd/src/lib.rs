//! HTTP inference service over the saved sentiment models.
//!
//! Models are loaded once into an immutable [`ModelSet`] and shared by every request.
//! Endpoints: `POST /predict`, `GET /models`, `GET /health`.

use std::future::Future;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::Value;
use thiserror::Error;
use tower_http::cors::{AllowOrigin, CorsLayer};
use tweetsense_core::api::{
    ErrorBody, HealthResponse, HealthStatus, ModelId, ModelInfo, ModelSelector, PredictionResponse, Sentiment,
    LATENCY_HEADER, MAX_BODY_BYTES,
};
use tweetsense_core::logreg::label_of;
use tweetsense_core::modelstore::{self, ArtifactManifest, StoreError};
use tweetsense_core::pipeline::{ClassicalModel, NeuralModel};
use tweetsense_core::textprep::preprocess;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{0}")]
    BadRequest(String),
    #[error("no models are loaded")]
    Unavailable,
    #[error("inference failed: {0}")]
    Internal(String),
}

impl ServiceError {
    fn status(&self) -> StatusCode {
        match self {
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Unavailable => StatusCode::SERVICE_UNAVAILABLE,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        (self.status(), Json(ErrorBody { error: self.to_string() })).into_response()
    }
}

#[derive(Debug, Clone)]
pub struct Loaded<M> {
    pub model: M,
    pub manifest: ArtifactManifest,
}

/// The artifacts a service instance answers from. Never mutated after construction.
#[derive(Debug, Clone, Default)]
pub struct ModelSet {
    pub lr: Option<Loaded<ClassicalModel>>,
    pub bilstm: Option<Loaded<NeuralModel>>,
}

impl ModelSet {
    /// Loads whichever artifacts are given; any failure aborts the whole load.
    pub fn load(lr: Option<&Path>, bilstm: Option<&Path>) -> Result<Self, StoreError> {
        let lr = lr
            .map(|p| modelstore::load(p)?.into_classical())
            .transpose()?
            .map(|(model, manifest)| Loaded { model, manifest });
        let bilstm = bilstm
            .map(|p| modelstore::load(p)?.into_neural())
            .transpose()?
            .map(|(model, manifest)| Loaded { model, manifest });
        Ok(ModelSet { lr, bilstm })
    }

    pub fn loaded_ids(&self) -> Vec<ModelId> {
        let mut ids = Vec::new();
        if self.lr.is_some() {
            ids.push(ModelId::Lr);
        }
        if self.bilstm.is_some() {
            ids.push(ModelId::Bilstm);
        }
        ids
    }

    pub fn infos(&self) -> Vec<ModelInfo> {
        let test_accuracy = |m: &ArtifactManifest| m.config.get("test_accuracy").and_then(Value::as_f64);
        let mut out = Vec::new();
        if let Some(l) = &self.lr {
            out.push(ModelInfo {
                model: ModelId::Lr,
                vocab_size: l.model.vectorizer.dim(),
                parameter_count: l.model.model.dim() + 1,
                trained_at: l.manifest.created_at.clone(),
                test_accuracy: test_accuracy(&l.manifest),
            });
        }
        if let Some(b) = &self.bilstm {
            out.push(ModelInfo {
                model: ModelId::Bilstm,
                vocab_size: b.model.vocab.size(),
                parameter_count: b.model.model.parameter_count(),
                trained_at: b.manifest.created_at.clone(),
                test_accuracy: test_accuracy(&b.manifest),
            });
        }
        out
    }

    /// Runs the requested model(s) on `text` in inference mode.
    pub fn predict(&self, text: &str, selector: ModelSelector) -> Result<Vec<PredictionResponse>, ServiceError> {
        if self.lr.is_none() && self.bilstm.is_none() {
            return Err(ServiceError::Unavailable);
        }
        let tokens = preprocess(text);
        let internal = |e: tweetsense_core::pipeline::PipelineError| ServiceError::Internal(e.to_string());
        let mut out = Vec::new();
        for id in selector.ids() {
            let not_loaded = || {
                ServiceError::BadRequest(format!(
                    "model {id} is not loaded; loaded models: {}",
                    self.loaded_ids().iter().map(ModelId::as_str).collect::<Vec<_>>().join(", ")
                ))
            };
            let (p, used, truncated) = match id {
                ModelId::Lr => {
                    let m = &self.lr.as_ref().ok_or_else(not_loaded)?.model;
                    (m.predict_proba_tokens(&tokens).map_err(internal)?, tokens.tokens.clone(), false)
                }
                ModelId::Bilstm => {
                    let m = &self.bilstm.as_ref().ok_or_else(not_loaded)?.model;
                    let keep = tokens.len().min(m.max_len());
                    (
                        m.predict_proba_tokens(&tokens).map_err(internal)?,
                        tokens.tokens[..keep].to_vec(),
                        tokens.len() > keep,
                    )
                }
            };
            out.push(PredictionResponse {
                model: *id,
                label: Sentiment::from_label(label_of(p)),
                probability_positive: p,
                tokens: used,
                truncated,
                degenerate_input: tokens.is_empty(),
            });
        }
        Ok(out)
    }
}

#[derive(Clone)]
pub struct AppState {
    models: Arc<ModelSet>,
    started: Instant,
}

impl AppState {
    pub fn new(models: ModelSet) -> Self {
        AppState {
            models: Arc::new(models),
            started: Instant::now(),
        }
    }

    pub fn models(&self) -> &ModelSet {
        &self.models
    }
}

/// Which models a `/predict` call asked for, handed to the request logger.
#[derive(Clone, Copy)]
struct Served(ModelSelector);

fn parse_request(body: &[u8]) -> Result<(String, ModelSelector), ServiceError> {
    let v: Value = serde_json::from_slice(body).map_err(|e| ServiceError::BadRequest(format!("malformed JSON: {e}")))?;
    let text = v
        .get("text")
        .and_then(Value::as_str)
        .ok_or_else(|| ServiceError::BadRequest("field \"text\" must be a string".into()))?;
    let model = v
        .get("model")
        .and_then(Value::as_str)
        .ok_or_else(|| ServiceError::BadRequest(format!("field \"model\" must be one of {}", ModelSelector::VALID)))?;
    let selector = ModelSelector::parse(model)
        .ok_or_else(|| ServiceError::BadRequest(format!("unknown model {model:?}; valid models: {}", ModelSelector::VALID)))?;
    Ok((text.to_string(), selector))
}

async fn predict(State(state): State<AppState>, body: Bytes) -> Result<Response, ServiceError> {
    let start = Instant::now();
    let (text, selector) = parse_request(&body)?;
    let results = state.models.predict(&text, selector)?;
    let mut resp = Json(results).into_response();
    let ms = format!("{:.3}", start.elapsed().as_secs_f64() * 1e3);
    resp.headers_mut()
        .insert(LATENCY_HEADER, HeaderValue::from_str(&ms).expect("ascii"));
    resp.extensions_mut().insert(Served(selector));
    Ok(resp)
}

async fn models(State(state): State<AppState>) -> Json<Vec<ModelInfo>> {
    Json(state.models.infos())
}

async fn health(State(state): State<AppState>) -> Json<HealthResponse> {
    let loaded = state.models.loaded_ids().len();
    Json(HealthResponse {
        status: if loaded > 0 { HealthStatus::Ok } else { HealthStatus::Degraded },
        uptime_s: state.started.elapsed().as_secs_f64(),
        models_loaded: loaded,
    })
}

async fn log_request(req: Request, next: Next) -> Response {
    let start = Instant::now();
    let method = req.method().clone();
    let path = req.uri().path().to_string();
    let resp = next.run(req).await;
    let model = resp
        .extensions()
        .get::<Served>()
        .map(|s| format!("{:?}", s.0).to_lowercase())
        .unwrap_or_else(|| "-".into());
    tracing::info!(
        %method,
        %path,
        status = resp.status().as_u16(),
        model,
        latency_ms = start.elapsed().as_secs_f64() * 1e3,
        "request"
    );
    resp
}

/// Builds the service. `cors_origin` restricts cross-origin access to one origin;
/// `None` allows any origin.
pub fn router(state: AppState, cors_origin: Option<HeaderValue>) -> Router {
    let origin = match cors_origin {
        Some(o) => AllowOrigin::exact(o),
        None => AllowOrigin::any(),
    };
    let cors = CorsLayer::new()
        .allow_origin(origin)
        .allow_methods([axum::http::Method::GET, axum::http::Method::POST])
        .allow_headers([header::CONTENT_TYPE])
        .expose_headers([header::HeaderName::from_static(LATENCY_HEADER)]);
    Router::new()
        .route("/predict", post(predict))
        .route("/models", get(models))
        .route("/health", get(health))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .layer(cors)
        .layer(middleware::from_fn(log_request))
        .with_state(state)
}

/// Serves until `shutdown` resolves, then drains in-flight requests.
pub async fn serve(
    listener: tokio::net::TcpListener,
    app: Router,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}
