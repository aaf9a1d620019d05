//! HTTP front of the convergence kernel: start runs, follow their traces,
//! and let an operator authorize a way out of a deadlock.
//!
//! Every run lives in its own directory under the data dir. Trace events are
//! appended to `events.jsonl` before anyone else sees them, so a restart can
//! rebuild the run list from disk alone.

mod api;
mod resolution;
mod store;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;

pub use store::{RunHandle, RunStore};

pub const DEFAULT_PORT: u16 = 8787;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    /// Directory holding the built console bundle, served under `/console`.
    pub console_dir: Option<PathBuf>,
    /// Lets `GET /harnesses/{name}?constants=true` return constant values.
    pub expose_constants: bool,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            data_dir: data_dir.into(),
            console_dir: None,
            expose_constants: false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("data directory {path}: {source}")]
    Data { path: String, source: std::io::Error },
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("server error: {0}")]
    Serve(std::io::Error),
}

pub(crate) struct AppState {
    pub store: RunStore,
    pub expose_constants: bool,
}

pub(crate) type Shared = Arc<AppState>;

/// Loads the run store from `config.data_dir` and builds the router.
pub fn router(config: &ServiceConfig) -> Result<axum::Router, ServiceError> {
    let store = RunStore::open(&config.data_dir).map_err(|source| ServiceError::Data {
        path: config.data_dir.display().to_string(),
        source,
    })?;
    let state = Arc::new(AppState {
        store,
        expose_constants: config.expose_constants,
    });
    Ok(api::routes(state, config.console_dir.as_deref()))
}

/// Binds `addr` and serves until ctrl-c.
pub async fn serve(config: ServiceConfig, addr: SocketAddr) -> Result<(), ServiceError> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ServiceError::Bind { addr, source })?;
    serve_on(config, listener).await
}

pub async fn serve_on(config: ServiceConfig, listener: tokio::net::TcpListener) -> Result<(), ServiceError> {
    let app = router(&config)?;
    tracing::info!("listening on http://{}", listener.local_addr().map_err(ServiceError::Serve)?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(ServiceError::Serve)
}

#[derive(Debug)]
pub(crate) struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    pub fn not_found(what: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("no such {what}"))
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, message)
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    }

    pub fn io(err: std::io::Error) -> Self {
        tracing::error!("storage failure: {err}");
        Self::new(StatusCode::SERVICE_UNAVAILABLE, format!("storage unavailable: {err}"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}
