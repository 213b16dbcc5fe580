//! Session-based HTTP service for interactive segmentation.
//!
//! Every session is a sequence of committed snapshots. Mutations are
//! serialized per session behind a single-writer guard and must echo the
//! current revision; reads clone the latest snapshot pointer and never wait
//! for inference.

pub mod api;
pub mod render;
pub mod state;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Router;
use dins_core::transforms::ExpParams;
use dins_harness::backend::{BackendKind, BackendParams};
use dins_net::Model;
use thiserror::Error;

pub use api::router;
pub use state::{Event, Inputs, Segmenter, Snapshot};

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("unknown session {0}")]
    NotFound(u64),
    #[error("{0}")]
    BadRequest(String),
    #[error("stale revision {got}, current is {current}")]
    Conflict { got: u64, current: u64 },
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::Conflict { .. } => StatusCode::CONFLICT,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = serde_json::json!({ "error": self.to_string() });
        if let ApiError::Conflict { current, .. } = self {
            body["revision"] = current.into();
        }
        (self.status(), axum::Json(body)).into_response()
    }
}

/// Server-wide settings.
#[derive(Clone)]
pub struct ServerConfig {
    pub backend: BackendKind,
    pub params: BackendParams,
    pub model: Option<Arc<Model>>,
    /// Static files served at `/` when set.
    pub static_dir: Option<PathBuf>,
}

impl ServerConfig {
    pub fn new(backend: BackendKind, params: BackendParams, model: Option<Arc<Model>>) -> Self {
        Self { backend, params, model, static_dir: None }
    }

    pub fn default_exp(&self) -> ExpParams {
        self.params.exp
    }
}

/// One live session.
pub struct Session {
    pub id: u64,
    pub segmenter: Segmenter,
    writer: tokio::sync::Mutex<()>,
    current: RwLock<Arc<Snapshot>>,
}

impl Session {
    pub fn new(id: u64, segmenter: Segmenter, snapshot: Snapshot) -> Self {
        Self { id, segmenter, writer: tokio::sync::Mutex::new(()), current: RwLock::new(Arc::new(snapshot)) }
    }

    /// The latest committed revision.
    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.current.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Applies `event` if `revision` is current. Inference runs off the async
    /// workers; other sessions and readers of this one proceed meanwhile.
    pub async fn mutate(self: &Arc<Self>, revision: u64, event: Event, truth: Option<Arc<dins_core::volume::Mask>>) -> Result<Arc<Snapshot>, ApiError> {
        let _guard = self.writer.lock().await;
        let base = self.snapshot();
        if base.revision != revision {
            return Err(ApiError::Conflict { got: revision, current: base.revision });
        }
        let this = self.clone();
        let next = tokio::task::spawn_blocking(move || base.apply(event, truth, &this.segmenter))
            .await
            .map_err(|e| ApiError::Internal(format!("inference task failed: {e}")))??;
        let next = Arc::new(next);
        *self.current.write().unwrap_or_else(|e| e.into_inner()) = next.clone();
        Ok(next)
    }
}

/// Shared application state.
pub struct AppState {
    pub config: ServerConfig,
    sessions: RwLock<HashMap<u64, Arc<Session>>>,
    next_id: AtomicU64,
}

impl AppState {
    pub fn new(config: ServerConfig) -> Arc<Self> {
        Arc::new(Self { config, sessions: RwLock::new(HashMap::new()), next_id: AtomicU64::new(1) })
    }

    pub fn session(&self, id: u64) -> Result<Arc<Session>, ApiError> {
        self.sessions.read().unwrap_or_else(|e| e.into_inner()).get(&id).cloned().ok_or(ApiError::NotFound(id))
    }

    pub fn insert(&self, segmenter: Segmenter, snapshot: Snapshot) -> Arc<Session> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let session = Arc::new(Session::new(id, segmenter, snapshot));
        self.sessions.write().unwrap_or_else(|e| e.into_inner()).insert(id, session.clone());
        session
    }

    pub fn remove(&self, id: u64) -> Result<(), ApiError> {
        self.sessions.write().unwrap_or_else(|e| e.into_inner()).remove(&id).map(|_| ()).ok_or(ApiError::NotFound(id))
    }
}

/// The full application, including the optional static bundle.
pub fn app(state: Arc<AppState>) -> Router {
    let static_dir = state.config.static_dir.clone();
    let api = router(state);
    match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

/// Binds `addr` and serves until the process ends.
pub async fn serve(addr: SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app(state)).await
}
