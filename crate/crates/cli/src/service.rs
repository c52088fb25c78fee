//! HTTP editing service.

use std::sync::{Arc, RwLock};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use fegan_core::data::io;
use fegan_core::pipeline::EditModel;
use tokio::sync::Semaphore;

use crate::api::{encode_png, ApiError, EditRequest, EditResponse, HealthResponse, ParseResponse, SizeLimit};

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub limit: SizeLimit,
    /// Requests allowed to run a model forward at once.
    pub workers: usize,
    /// Largest accepted request body in bytes.
    pub body_limit: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { limit: SizeLimit::default(), workers: 2, body_limit: 64 << 20 }
    }
}

/// Shared state: the model slot stays empty until a checkpoint is installed.
#[derive(Clone)]
pub struct AppState {
    model: Arc<RwLock<Option<Arc<EditModel>>>>,
    pool: Arc<Semaphore>,
    config: Arc<ServiceConfig>,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        let workers = config.workers.max(1);
        Self { model: Arc::new(RwLock::new(None)), pool: Arc::new(Semaphore::new(workers)), config: Arc::new(config) }
    }

    pub fn with_model(config: ServiceConfig, model: EditModel) -> Self {
        let state = Self::new(config);
        state.install(model);
        state
    }

    pub fn install(&self, model: EditModel) {
        *self.model.write().unwrap_or_else(|e| e.into_inner()) = Some(Arc::new(model));
    }

    pub fn model(&self) -> Option<Arc<EditModel>> {
        self.model.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn is_ready(&self) -> bool {
        self.model().is_some()
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.body())).into_response()
    }
}

pub fn router(state: AppState) -> Router {
    let limit = state.config.body_limit;
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/edit", post(edit))
        .route("/v1/parse", post(parse))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

async fn health(State(state): State<AppState>) -> Response {
    let model = state.model();
    let body = HealthResponse {
        status: if model.is_some() { "ready" } else { "not_ready" }.to_string(),
        ready: model.is_some(),
        fingerprint: model.as_ref().map(|m| m.fingerprint().to_string()),
        resolution: model.as_ref().map(|m| {
            let (h, w) = m.resolution();
            [h, w]
        }),
        workers: state.config.workers.max(1),
    };
    let status = if body.ready { StatusCode::OK } else { StatusCode::SERVICE_UNAVAILABLE };
    (status, Json(body)).into_response()
}

fn parse_request(body: &[u8]) -> Result<EditRequest, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request("malformed_payload", e.to_string()))
}

/// Runs `work` on the blocking pool once a worker slot is free.
async fn run<T, F>(state: &AppState, body: Bytes, work: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&EditModel, EditRequest, SizeLimit) -> Result<T, ApiError> + Send + 'static,
{
    let model = state.model().ok_or_else(|| ApiError::new(503, "not_ready", "model is still loading"))?;
    let request = parse_request(&body)?;
    let permit = state.pool.clone().acquire_owned().await.map_err(|e| ApiError::new(500, "internal", e.to_string()))?;
    let limit = state.config.limit;
    let out = tokio::task::spawn_blocking(move || {
        let out = work(&model, request, limit);
        drop(permit);
        out
    })
    .await
    .map_err(|e| ApiError::new(500, "internal", e.to_string()))?;
    out
}

/// Edits one request synchronously.
pub fn edit_request(model: &EditModel, request: &EditRequest, limit: SizeLimit) -> Result<EditResponse, ApiError> {
    let start = Instant::now();
    let layers = request.layers(model.num_classes(), limit)?;
    let out = model.edit_layers(&layers, request.seed)?;
    let parsing = match request.options.return_parsing {
        true => Some(encode_png(&io::encode_parsing_png(&out.parsing)?)),
        false => None,
    };
    let (height, width) = out.image.dims();
    Ok(EditResponse {
        image: encode_png(&io::encode_image_png(&out.image)?),
        parsing,
        width,
        height,
        timing_ms: start.elapsed().as_secs_f64() * 1e3,
        fingerprint: model.fingerprint().to_string(),
    })
}

/// Completes the parsing for one request synchronously.
pub fn parse_request_layers(model: &EditModel, request: &EditRequest, limit: SizeLimit) -> Result<ParseResponse, ApiError> {
    let start = Instant::now();
    let layers = request.layers(model.num_classes(), limit)?;
    let parsing = model.parse_layers(&layers, request.seed)?;
    let (height, width) = parsing.dims();
    Ok(ParseResponse {
        parsing: encode_png(&io::encode_parsing_png(&parsing)?),
        width,
        height,
        timing_ms: start.elapsed().as_secs_f64() * 1e3,
        fingerprint: model.fingerprint().to_string(),
    })
}

async fn edit(State(state): State<AppState>, body: Bytes) -> Result<Json<EditResponse>, ApiError> {
    run(&state, body, |m, r, l| edit_request(m, &r, l)).await.map(Json)
}

async fn parse(State(state): State<AppState>, body: Bytes) -> Result<Json<ParseResponse>, ApiError> {
    run(&state, body, |m, r, l| parse_request_layers(m, &r, l)).await.map(Json)
}
