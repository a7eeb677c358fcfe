//! The provider's embedding service: pseudo-embedding plus watermark, over
//! HTTP or in process.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;

use espew_core::simulate::{pseudo_embed, EmbedderConfig};
use espew_core::{apply_watermark, Document, Embedding, Error, WatermarkKey};

use crate::wire::{embedding_body, health_body, parse_embedding_body, request_body, EmbedRequest};

pub const EMPTY_TEXT: &str = "empty after tokenization";

/// Immutable state shared by every request. The key never leaves memory.
#[derive(Debug, Clone)]
pub struct ServiceState {
    embedder: EmbedderConfig,
    key: WatermarkKey,
}

impl ServiceState {
    pub fn new(embedder: EmbedderConfig, key: WatermarkKey) -> espew_core::Result<Self> {
        key.validate()?;
        if let Some(d) = key.dim() {
            if d != embedder.dim {
                return Err(Error::Dimension {
                    expected: embedder.dim,
                    found: d,
                });
            }
        }
        Ok(ServiceState { embedder, key })
    }

    pub fn dim(&self) -> usize {
        self.embedder.dim
    }

    pub fn key(&self) -> &WatermarkKey {
        &self.key
    }

    pub fn embed(&self, doc: &Document) -> espew_core::Result<Embedding> {
        if doc.is_empty() {
            return Err(Error::Domain(EMPTY_TEXT.into()));
        }
        apply_watermark(doc, &pseudo_embed(doc, &self.embedder), &self.key)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpError {
    pub status: u16,
    pub message: String,
}

impl HttpError {
    fn bad_request(message: impl Into<String>) -> Self {
        HttpError {
            status: 400,
            message: message.into(),
        }
    }
}

/// Body of a `POST /embed` response. Equal bodies give equal bytes.
pub fn handle_embed_request(body: &[u8], state: &ServiceState) -> Result<String, HttpError> {
    let req: EmbedRequest =
        serde_json::from_slice(body).map_err(|e| HttpError::bad_request(format!("malformed request body: {e}")))?;
    let doc = Document::from_text("query", &req.text);
    if doc.is_empty() {
        return Err(HttpError::bad_request(EMPTY_TEXT));
    }
    let e = state.embed(&doc).map_err(|e| HttpError {
        status: 500,
        message: e.to_string(),
    })?;
    Ok(embedding_body(e.values()))
}

fn json(status: StatusCode, body: String) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

async fn embed_route(State(state): State<Arc<ServiceState>>, body: Bytes) -> Response {
    match handle_embed_request(&body, &state) {
        Ok(b) => json(StatusCode::OK, b),
        Err(e) => {
            let status = StatusCode::from_u16(e.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
            json(status, serde_json::json!({ "error": e.message }).to_string())
        }
    }
}

async fn health_route(State(state): State<Arc<ServiceState>>) -> Response {
    json(StatusCode::OK, health_body(state.dim()))
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/embed", post(embed_route))
        .route("/health", get(health_route))
        .with_state(state)
}

/// Serves until the process ends.
pub async fn serve(listener: tokio::net::TcpListener, state: ServiceState) -> std::io::Result<()> {
    axum::serve(listener, router(Arc::new(state))).await
}

/// Binds `addr` and serves on a background runtime. Returns the bound
/// address; meant for tests and in-process demos.
pub fn spawn_background(addr: SocketAddr, state: ServiceState) -> std::io::Result<SocketAddr> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()?;
    let listener = runtime.block_on(tokio::net::TcpListener::bind(addr))?;
    let bound = listener.local_addr()?;
    std::thread::spawn(move || {
        let _ = runtime.block_on(serve(listener, state));
    });
    Ok(bound)
}

/// Client for a remote `/embed` endpoint.
#[derive(Debug, Clone)]
pub struct RemoteService {
    client: reqwest::blocking::Client,
    base: String,
}

fn transport(e: impl std::fmt::Display) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

impl RemoteService {
    pub fn new(base_url: &str) -> espew_core::Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(transport)?;
        Ok(RemoteService {
            client,
            base: base_url.trim_end_matches('/').to_string(),
        })
    }

    pub fn embed(&self, doc: &Document) -> espew_core::Result<Embedding> {
        let resp = self
            .client
            .post(format!("{}/embed", self.base))
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(request_body(&doc.text()))
            .send()
            .map_err(transport)?;
        let status = resp.status();
        let body = resp.text().map_err(transport)?;
        if !status.is_success() {
            return Err(Error::Format(format!("service answered {status}: {body}")));
        }
        Embedding::new(parse_embedding_body(&body)?)
    }

    /// Dimension advertised by `/health`.
    pub fn dim(&self) -> espew_core::Result<usize> {
        let body = self
            .client
            .get(format!("{}/health", self.base))
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.text())
            .map_err(transport)?;
        let v: serde_json::Value = serde_json::from_str(&body)?;
        v.get("dim")
            .and_then(serde_json::Value::as_u64)
            .map(|d| d as usize)
            .ok_or_else(|| Error::Format(format!("health response without dim: {body}")))
    }
}
