use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use reversal_core::storage::{append_run, RunRecord};
use reversal_core::EnvConfig;
use serde_json::json;
use tower_http::cors::CorsLayer;

use crate::session::{ChoiceRequest, CreateRequest, Feedback, Session, SessionView, SubmitError};

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    /// Task defaults; the seed is replaced per session.
    pub defaults: EnvConfig,
    pub max_trials: usize,
    /// JSONL file receiving finished runs.
    pub out: Option<PathBuf>,
    /// Permissive CORS, for serving the UI from another origin.
    pub cors: bool,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            defaults: EnvConfig::default(),
            max_trials: 10_000,
            out: None,
            cors: false,
        }
    }
}

pub struct AppState {
    cfg: ServiceConfig,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    store: Mutex<()>,
}

impl AppState {
    pub fn new(cfg: ServiceConfig) -> Arc<Self> {
        Arc::new(AppState {
            cfg,
            sessions: Mutex::new(HashMap::new()),
            store: Mutex::new(()),
        })
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        lock(&self.sessions)
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("unknown session {id}")))
    }
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

#[derive(Debug)]
struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError(StatusCode::UNPROCESSABLE_ENTITY, r.body_text())
    }
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

async fn create(
    State(state): State<Arc<AppState>>,
    body: Result<Option<Json<CreateRequest>>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionView>), ApiError> {
    let req = body?.map(|Json(b)| b).unwrap_or_default();
    let id = uuid::Uuid::new_v4().simple().to_string();
    let session = Session::new(id.clone(), req, &state.cfg.defaults, state.cfg.max_trials, rand::random())
        .map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
    let view = session.view();
    lock(&state.sessions).insert(id, Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    let s = state.session(&id)?;
    let view = lock(&s).view();
    Ok(Json(view))
}

async fn choice(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<ChoiceRequest>, JsonRejection>,
) -> Result<Json<Feedback>, ApiError> {
    let s = state.session(&id)?;
    let Json(req) = body?;
    let (feedback, finished) = {
        let mut guard = lock(&s);
        let fb = guard.submit(&req, now_ms()).map_err(|e| match e {
            SubmitError::InvalidLabel(m) => ApiError(StatusCode::UNPROCESSABLE_ENTITY, m),
            SubmitError::Conflict(m) => ApiError(StatusCode::CONFLICT, m),
            SubmitError::Internal(e) => ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        })?;
        let finished = fb.done.then(|| guard.run_record());
        (fb, finished)
    };
    if let (Some(run), Some(path)) = (finished, &state.cfg.out) {
        let _g = lock(&state.store);
        append_run(path, &run).map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, format!("persist failed: {e}")))?;
    }
    Ok(Json(feedback))
}

async fn export(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<RunRecord>, ApiError> {
    let s = state.session(&id)?;
    let guard = lock(&s);
    if !guard.is_done() {
        return Err(ApiError(StatusCode::CONFLICT, "session is still active".into()));
    }
    Ok(Json(guard.run_record()))
}

pub fn router(state: Arc<AppState>) -> Router {
    let cors = state.cfg.cors;
    let app = Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/choice", post(choice))
        .route("/sessions/{id}/export", get(export))
        .with_state(state);
    if cors {
        app.layer(CorsLayer::permissive())
    } else {
        app
    }
}

/// Binds `addr` and serves until the process ends.
pub async fn serve(addr: SocketAddr, cfg: ServiceConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(AppState::new(cfg))).await
}
