//! HTTP front for annotation sessions.
//!
//! Sessions live as one JSON document each in a storage directory. Writes to
//! a session are serialized through a per-session lock and hit the disk
//! before the request is acknowledged.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tower_http::services::ServeDir;

use dforge::eval::{ratings_csv, QualityLabel};
use dforge::session::{AnnotationSession, Progress, RateOutcome, RatingInput, SessionError};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    pub storage_dir: PathBuf,
    /// Built UI assets served under `/`.
    pub static_dir: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("storage directory {path:?} is not writable: {source}")]
    Storage {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid session id {0:?}")]
    BadSessionId(String),
    #[error("session {0:?} already exists")]
    Exists(String),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("server: {0}")]
    Io(#[from] std::io::Error),
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

type Shared = Arc<tokio::sync::Mutex<AnnotationSession>>;

/// File-backed session storage.
pub struct SessionStore {
    dir: PathBuf,
    open: Mutex<HashMap<String, Shared>>,
}

impl SessionStore {
    /// Opens (creating if needed) the storage directory and checks that it
    /// is writable.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, ServiceError> {
        let dir = dir.into();
        let storage = |source| ServiceError::Storage {
            path: dir.clone(),
            source,
        };
        std::fs::create_dir_all(&dir).map_err(storage)?;
        let probe = dir.join(".write-probe");
        std::fs::write(&probe, b"").map_err(storage)?;
        std::fs::remove_file(&probe).map_err(storage)?;
        Ok(Self {
            dir,
            open: Mutex::new(HashMap::new()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, id: &str) -> Result<PathBuf, ServiceError> {
        if !valid_id(id) {
            return Err(ServiceError::BadSessionId(id.to_string()));
        }
        Ok(self.dir.join(format!("{id}.json")))
    }

    /// Persists a new session; refuses to overwrite an existing one.
    pub fn create(&self, session: &AnnotationSession) -> Result<PathBuf, ServiceError> {
        let path = self.path_for(&session.session_id)?;
        if path.exists() {
            return Err(ServiceError::Exists(session.session_id.clone()));
        }
        session.save(&path)?;
        Ok(path)
    }

    fn handle(&self, id: &str) -> Result<Shared, ApiError> {
        let mut open = self.open.lock().expect("session map lock");
        if let Some(s) = open.get(id) {
            return Ok(s.clone());
        }
        let path = self.path_for(id).map_err(|_| ApiError::not_found("unknown session"))?;
        if !path.exists() {
            return Err(ApiError::not_found("unknown session"));
        }
        let session = AnnotationSession::load(&path).map_err(|e| {
            tracing::error!(session = id, error = %e, "failed to load session");
            ApiError::internal("session could not be loaded")
        })?;
        let shared = Arc::new(tokio::sync::Mutex::new(session));
        open.insert(id.to_string(), shared.clone());
        Ok(shared)
    }

    async fn authorized(&self, id: &str, token: &Option<String>) -> Result<Shared, ApiError> {
        let shared = self.handle(id)?;
        let ok = token.as_deref() == Some(shared.lock().await.token.as_str());
        // a wrong token looks exactly like an unknown session
        if ok {
            Ok(shared)
        } else {
            Err(ApiError::not_found("unknown session"))
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
    fn not_found(m: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, m)
    }
    fn internal(m: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, m)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match &e {
            SessionError::UnknownPair { .. } | SessionError::UnknownQuestion { .. } => {
                StatusCode::NOT_FOUND
            }
            SessionError::AmbiguousPair { .. } => StatusCode::BAD_REQUEST,
            SessionError::IdempotencyConflict { .. } | SessionError::VersionConflict { .. } => {
                StatusCode::CONFLICT
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

#[derive(Debug, Deserialize)]
pub struct TokenQuery {
    token: Option<String>,
}

#[derive(Debug, Deserialize)]
pub struct RatingBody {
    question_id: String,
    distractor: String,
    #[serde(default)]
    position: Option<usize>,
    label: String,
    #[serde(default)]
    idempotency_key: Option<String>,
    /// Session version the client last saw; stale writes are rejected.
    #[serde(default)]
    base_version: Option<u64>,
}

#[derive(Debug, Serialize)]
struct RatingAck {
    status: &'static str,
    progress: Progress,
    version: u64,
}

async fn next(
    State(store): State<Arc<SessionStore>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<TokenQuery>,
) -> Result<Response, ApiError> {
    let shared = store.authorized(&id, &q.token).await?;
    let session = shared.lock().await;
    Ok(Json(session.next_payload()).into_response())
}

async fn rate(
    State(store): State<Arc<SessionStore>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<TokenQuery>,
    Json(body): Json<RatingBody>,
) -> Result<Response, ApiError> {
    let label: QualityLabel = body
        .label
        .parse()
        .map_err(|e: dforge::eval::EvalError| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    let shared = store.authorized(&id, &q.token).await?;
    let mut session = shared.lock().await;

    let seen_key = body.idempotency_key.as_ref().is_some_and(|k| {
        session
            .audit
            .iter()
            .any(|a| a.idempotency_key.as_ref() == Some(k))
    });
    if let (false, Some(expected)) = (seen_key, body.base_version) {
        let actual = session.version();
        if expected != actual {
            return Err(SessionError::VersionConflict { expected, actual }.into());
        }
    }

    let input = RatingInput {
        question_id: body.question_id,
        distractor: body.distractor,
        position: body.position,
        label,
        idempotency_key: body.idempotency_key,
    };
    let mut updated = session.clone();
    let outcome = updated.rate(&input)?;
    if outcome != RateOutcome::Replayed {
        // write-then-ack; memory only changes once the disk does
        let path = store.path_for(&id).map_err(|_| ApiError::not_found("unknown session"))?;
        updated.save(&path).map_err(|e| {
            tracing::error!(session = %id, error = %e, "failed to persist rating");
            ApiError::internal("rating could not be stored")
        })?;
        *session = updated;
    }
    Ok(Json(RatingAck {
        status: if outcome == RateOutcome::Replayed { "replayed" } else { "stored" },
        progress: session.progress(),
        version: session.version(),
    })
    .into_response())
}

async fn summary(
    State(store): State<Arc<SessionStore>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<TokenQuery>,
) -> Result<Response, ApiError> {
    let shared = store.authorized(&id, &q.token).await?;
    let session = shared.lock().await;
    Ok(Json(session.summary()).into_response())
}

/// Ratings CSV with model tags; only available once the session is complete.
async fn export(
    State(store): State<Arc<SessionStore>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<TokenQuery>,
) -> Result<Response, ApiError> {
    let shared = store.authorized(&id, &q.token).await?;
    let session = shared.lock().await;
    if !session.is_complete() {
        return Err(ApiError::new(StatusCode::CONFLICT, "session is not complete"));
    }
    let csv = ratings_csv(&session.export().records)
        .map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv).into_response())
}

pub fn router(store: Arc<SessionStore>, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/sessions/{id}/next", get(next))
        .route("/sessions/{id}/ratings", post(rate))
        .route("/sessions/{id}/summary", get(summary))
        .route("/sessions/{id}/export", get(export))
        .with_state(store);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub async fn serve(config: ServiceConfig) -> Result<(), ServiceError> {
    let store = Arc::new(SessionStore::open(&config.storage_dir)?);
    let app = router(store, config.static_dir.as_deref());
    let listener = tokio::net::TcpListener::bind(config.bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "session service listening");
    axum::serve(listener, app).await?;
    Ok(())
}
