//! HTTP server exposing a [`KbSet`] through a batch `/known` endpoint.
//!
//! `POST /known` takes a JSON array of SWHID strings and answers with an
//! object holding one `{"known": bool}` value per distinct input id.
//! `GET /health` reports `{"status":"ok","kb_size":N}`.

use std::io;
use std::net::{SocketAddr, TcpListener as StdListener};
use std::path::PathBuf;
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Map, Value};
use thiserror::Error;
use tokio::sync::oneshot;

use crate::id::parse_swhid;
use crate::kb::{load_kb_file, KbError, KbSet, DEFAULT_BATCH_SIZE};

/// Request bodies above this many bytes per allowed id are refused with 413.
const BODY_BYTES_PER_ID: usize = 256;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub host: String,
    pub port: u16,
    pub kb_path: PathBuf,
    pub max_batch: usize,
}

impl ServerConfig {
    pub fn new(kb_path: impl Into<PathBuf>) -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8100,
            kb_path: kb_path.into(),
            max_batch: DEFAULT_BATCH_SIZE,
        }
    }
}

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("port must be in 1..=65535")]
    Port,
    #[error("max_batch must be positive")]
    MaxBatch,
    #[error("cannot load knowledge base: {0}")]
    Kb(#[from] KbError),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: io::Error },
    #[error("server failed: {0}")]
    Io(#[from] io::Error),
}

/// Reasons a `/known` request is rejected with 400.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KnownError {
    #[error("request body must be a JSON array of SWHID strings: {0}")]
    Body(String),
    #[error("element {index} ({value:?}) is not a valid SWHID: {reason}")]
    Swhid {
        index: usize,
        value: String,
        reason: String,
    },
    #[error("batch of {len} ids exceeds the limit of {max}")]
    Oversize { len: usize, max: usize },
}

/// Answers one `/known` request body against `kb`.
pub fn handle_known(body: &[u8], kb: &KbSet, max_batch: usize) -> Result<Map<String, Value>, KnownError> {
    let items: Vec<String> =
        serde_json::from_slice(body).map_err(|e| KnownError::Body(e.to_string()))?;
    if items.len() > max_batch {
        return Err(KnownError::Oversize {
            len: items.len(),
            max: max_batch,
        });
    }
    let mut out = Map::new();
    for (index, value) in items.into_iter().enumerate() {
        let id = parse_swhid(&value).map_err(|e| KnownError::Swhid {
            index,
            value: value.clone(),
            reason: e.to_string(),
        })?;
        out.insert(value, json!({ "known": kb.contains(&id) }));
    }
    Ok(out)
}

struct AppState {
    kb: Arc<KbSet>,
    max_batch: usize,
}

async fn known(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    match handle_known(&body, &state.kb, state.max_batch) {
        Ok(map) => Json(Value::Object(map)).into_response(),
        Err(e) => (
            StatusCode::BAD_REQUEST,
            Json(json!({ "error": e.to_string() })),
        )
            .into_response(),
    }
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({ "status": "ok", "kb_size": state.kb.len() }))
}

/// Builds the axum router over an immutable KB snapshot.
pub fn router(kb: Arc<KbSet>, max_batch: usize) -> Router {
    let limit = 1024 + max_batch.saturating_mul(BODY_BYTES_PER_ID);
    let state = Arc::new(AppState { kb, max_batch });
    Router::new()
        .route("/known", post(known))
        .route("/known/", post(known))
        .route("/health", get(health))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

fn runtime() -> io::Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
}

/// Loads the KB, binds, and serves until the process is terminated.
pub fn serve(config: &ServerConfig) -> Result<(), ServerError> {
    if config.port == 0 {
        return Err(ServerError::Port);
    }
    if config.max_batch == 0 {
        return Err(ServerError::MaxBatch);
    }
    let kb = Arc::new(load_kb_file(&config.kb_path)?);
    let addr = format!("{}:{}", config.host, config.port);
    let listener = StdListener::bind(&addr).map_err(|source| ServerError::Bind {
        addr: addr.clone(),
        source,
    })?;
    log::info!("serving {} ids from {} on {addr}", kb.len(), config.kb_path.display());
    runtime()?.block_on(async move {
        listener.set_nonblocking(true)?;
        let listener = tokio::net::TcpListener::from_std(listener)?;
        axum::serve(listener, router(kb, config.max_batch)).await
    })?;
    Ok(())
}

/// A server running on a background thread; stopped on drop.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<io::Result<()>>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Base URL suitable for [`crate::kb::HttpConfig`].
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }
}

/// Serves `kb` on `addr` (port 0 picks a free port) from a background thread.
pub fn spawn(kb: Arc<KbSet>, addr: SocketAddr, max_batch: usize) -> Result<ServerHandle, ServerError> {
    spawn_router(router(kb, max_batch), addr)
}

/// Like [`spawn`] for an arbitrary router.
pub fn spawn_router(app: Router, addr: SocketAddr) -> Result<ServerHandle, ServerError> {
    let listener = StdListener::bind(addr).map_err(|source| ServerError::Bind {
        addr: addr.to_string(),
        source,
    })?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let rt = runtime()?;
    let thread = std::thread::spawn(move || {
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener)?;
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
        })
    });
    Ok(ServerHandle {
        addr,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}
