//! HTTP service: `POST /classify`, `POST /moderate`, `GET /health` and
//! `GET /model`.
//!
//! The checkpoint loads on a background thread after the listener is up.
//! Until it finishes, `/health` and every inference endpoint answer 503.

use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

use anyhow::{Context, Result};
use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hatemod_core::corpus::NUM_CLASSES;
use hatemod_core::models::ModelSpec;
use hatemod_core::moderation::{build_rewriter, ModerationResult, Moderator, RewriterConfig};
use hatemod_core::Error;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Semaphore;

use crate::config::ServiceConfig;

pub const RESPONSE_SCHEMA_VERSION: u32 = 1;

/// What `/model` reports about the loaded checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelInfo {
    pub checkpoint: PathBuf,
    pub checkpoint_sha256: String,
    pub spec: ModelSpec,
    pub backend: String,
    pub parameters: usize,
}

struct Loaded {
    moderator: Arc<Moderator>,
    info: ModelInfo,
}

/// Shared between handlers. Cheap to clone.
#[derive(Clone)]
pub struct AppState {
    loaded: Arc<OnceLock<std::result::Result<Loaded, String>>>,
    permits: Arc<Semaphore>,
}

impl AppState {
    pub fn new(max_concurrent_inference: usize) -> Self {
        Self {
            loaded: Arc::new(OnceLock::new()),
            permits: Arc::new(Semaphore::new(max_concurrent_inference)),
        }
    }

    /// Marks the service ready. Later calls are ignored.
    pub fn install(&self, moderator: Moderator, info: ModelInfo) {
        let _ = self.loaded.set(Ok(Loaded {
            moderator: Arc::new(moderator),
            info,
        }));
    }

    pub fn fail(&self, message: String) {
        let _ = self.loaded.set(Err(message));
    }

    pub fn is_ready(&self) -> bool {
        matches!(self.loaded.get(), Some(Ok(_)))
    }

    fn ready(&self) -> std::result::Result<&Loaded, ApiError> {
        match self.loaded.get() {
            Some(Ok(loaded)) => Ok(loaded),
            Some(Err(message)) => Err(ApiError::new(
                StatusCode::SERVICE_UNAVAILABLE,
                "model_failed",
                message.clone(),
            )),
            None => Err(ApiError::new(
                StatusCode::SERVICE_UNAVAILABLE,
                "not_ready",
                "model is still loading",
            )),
        }
    }
}

/// Loads the checkpoint and builds the rewriter. Blocking; run it off the
/// async runtime, since the remote backend owns a blocking HTTP client.
pub fn load_moderator(
    checkpoint: &std::path::Path,
    rewriter: &RewriterConfig,
) -> Result<(Moderator, ModelInfo)> {
    let bytes = std::fs::read(checkpoint)
        .with_context(|| format!("reading checkpoint {}", checkpoint.display()))?;
    let checkpoint_sha256 = {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(&bytes))
    };
    let classifier = hatemod_core::models::Classifier::load(checkpoint, &candle_core::Device::Cpu)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let backend = build_rewriter(rewriter)?;
    let info = ModelInfo {
        checkpoint: checkpoint.to_path_buf(),
        checkpoint_sha256,
        spec: classifier.spec().clone(),
        backend: backend.id(),
        parameters: classifier.handle().parameter_count(),
    };
    Ok((Moderator::new(classifier, backend, rewriter.failure_mode), info))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TextRequest {
    text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ClassifyResponse {
    pub schema_version: u32,
    pub label: usize,
    pub label_name: String,
    pub probabilities: [f64; NUM_CLASSES],
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ModerateResponse {
    pub schema_version: u32,
    #[serde(flatten)]
    pub result: ModerationResult,
}

#[derive(Debug)]
struct ApiError {
    status: StatusCode,
    body: serde_json::Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": code, "message": message.into() }),
        }
    }

    fn from_core(e: Error) -> Self {
        match e {
            Error::RewriteFailed {
                label,
                probabilities,
                source,
            } => Self {
                status: StatusCode::BAD_GATEWAY,
                body: json!({
                    "error": "rewrite_failed",
                    "flagged_unrewritten": true,
                    "label": label.index(),
                    "label_name": label.name(),
                    "probabilities": probabilities,
                    "message": source.to_string(),
                }),
            },
            other => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

fn parse_text(body: &Bytes) -> std::result::Result<String, ApiError> {
    if body.is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "empty_body", "request body is empty"));
    }
    serde_json::from_slice::<TextRequest>(body)
        .map(|r| r.text)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "malformed_json", e.to_string()))
}

/// Runs blocking inference on the worker pool, bounded by the semaphore.
async fn infer<T, F>(state: &AppState, f: F) -> std::result::Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Moderator) -> hatemod_core::Result<T> + Send + 'static,
{
    let moderator = Arc::clone(&state.ready()?.moderator);
    let _permit = state
        .permits
        .acquire()
        .await
        .map_err(|_| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "shutting_down", "closed"))?;
    tokio::task::spawn_blocking(move || f(&moderator))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(ApiError::from_core)
}

async fn health(State(state): State<AppState>) -> Response {
    match state.ready() {
        Ok(_) => (StatusCode::OK, Json(json!({ "status": "ready" }))).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn model(State(state): State<AppState>) -> std::result::Result<Json<ModelInfo>, ApiError> {
    Ok(Json(state.ready()?.info.clone()))
}

async fn classify(
    State(state): State<AppState>,
    body: Bytes,
) -> std::result::Result<Json<ClassifyResponse>, ApiError> {
    let text = parse_text(&body)?;
    let p = infer(&state, move |m| m.classify(&text)).await?;
    Ok(Json(ClassifyResponse {
        schema_version: RESPONSE_SCHEMA_VERSION,
        label: p.label.index(),
        label_name: p.label.name().to_string(),
        probabilities: p.probabilities,
    }))
}

async fn moderate(
    State(state): State<AppState>,
    body: Bytes,
) -> std::result::Result<Json<ModerateResponse>, ApiError> {
    let text = parse_text(&body)?;
    let result = infer(&state, move |m| m.moderate(&text)).await?;
    Ok(Json(ModerateResponse {
        schema_version: RESPONSE_SCHEMA_VERSION,
        result,
    }))
}

pub fn router(state: AppState, max_body_bytes: usize) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/model", get(model))
        .route("/classify", post(classify))
        .route("/moderate", post(moderate))
        .layer(DefaultBodyLimit::max(max_body_bytes))
        .with_state(state)
}

/// Binds, starts loading the checkpoint in the background and serves until
/// interrupted.
pub async fn serve(service: ServiceConfig, rewriter: RewriterConfig) -> Result<()> {
    let checkpoint = service
        .checkpoint
        .clone()
        .ok_or_else(|| crate::exit::config_error("no checkpoint configured for the service"))?;
    let state = AppState::new(service.max_concurrent_inference);
    let listener = tokio::net::TcpListener::bind(service.bind)
        .await
        .with_context(|| format!("binding {}", service.bind))?;
    tracing::info!(addr = %listener.local_addr()?, "listening; loading model");

    let loader = state.clone();
    std::thread::spawn(move || match load_moderator(&checkpoint, &rewriter) {
        Ok((moderator, info)) => {
            tracing::info!(checkpoint = %info.checkpoint.display(), backend = %info.backend, "model ready");
            loader.install(moderator, info);
        }
        Err(e) => {
            tracing::error!(error = format!("{e:#}"), "model failed to load");
            loader.fail(format!("{e:#}"));
        }
    });

    axum::serve(listener, router(state, service.max_body_bytes))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .context("serving")
}

