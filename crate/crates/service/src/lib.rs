//! HTTP+JSON API over [`SessionStore`].
//!
//! ```text
//! POST /sessions                                   {start, scheme?, config?}
//! GET  /sessions
//! GET  /sessions/{id}
//! POST /sessions/{id}/phrase-list                  {tokens}
//! POST /sessions/{id}/attempts/{k}/stop
//! POST /sessions/{id}/attempts/{k}/infill-step
//! POST /sessions/{id}/attempts/{k}/infill-complete
//! POST /sessions/{id}/attempts/{k}/score
//! GET  /healthz
//! ```
//!
//! Failures answer `{code, message, detail}` with a matching status.

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use bookend_core::infill::InfillError;
use bookend_core::session::{Scheme, SessionConfig, SessionError, SessionStore};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;

#[derive(Debug, Clone, Default)]
pub struct ServiceOptions {
    /// Served at `/` for anything the API does not route.
    pub static_dir: Option<PathBuf>,
    pub cors: bool,
    /// Base session config; fields given in a create request override it.
    pub default_config: SessionConfig,
}

struct AppState {
    store: Arc<SessionStore>,
    defaults: Value,
}

type Shared = State<Arc<AppState>>;

#[derive(Debug, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub detail: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            detail: Value::Null,
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_input", message)
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let code = e.code();
        let status = match code {
            "not_found" => StatusCode::NOT_FOUND,
            "invalid_input" | "unsupported" => StatusCode::BAD_REQUEST,
            "conflict" => StatusCode::CONFLICT,
            "backend_error" => StatusCode::BAD_GATEWAY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let detail = match &e {
            SessionError::Llm(inner) if !inner.transcript().is_empty() => json!({ "transcript": inner.transcript() }),
            SessionError::Infill(InfillError::Aborted { trace, .. }) => json!({ "trace": trace }),
            _ => Value::Null,
        };
        Self {
            status,
            code,
            message: e.to_string(),
            detail,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    let body: &[u8] = if body.iter().all(u8::is_ascii_whitespace) {
        b"{}"
    } else {
        body
    };
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("bad request body: {e}")))
}

fn attempt_index(raw: &str) -> ApiResult<usize> {
    raw.parse()
        .map_err(|_| ApiError::bad_request(format!("attempt index must be a non-negative integer, got {raw:?}")))
}

/// Run a store operation off the async workers; pipeline calls block.
async fn blocking<T, F>(store: Arc<SessionStore>, op: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&SessionStore) -> Result<T, SessionError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || op(&store))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(ApiError::from)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateRequest {
    start: String,
    #[serde(default = "default_scheme")]
    scheme: Scheme,
    #[serde(default)]
    config: serde_json::Map<String, Value>,
}

/// Request fields over server defaults, one level deep.
fn merged_config(defaults: &Value, overrides: serde_json::Map<String, Value>) -> ApiResult<SessionConfig> {
    let mut base = defaults.clone();
    let map = base.as_object_mut().expect("config serializes to an object");
    for (k, v) in overrides {
        match (map.get_mut(&k), v) {
            (Some(Value::Object(inner)), Value::Object(patch)) => inner.extend(patch),
            (_, v) => {
                map.insert(k, v);
            }
        }
    }
    serde_json::from_value(base).map_err(|e| ApiError::bad_request(format!("bad session config: {e}")))
}

fn default_scheme() -> Scheme {
    Scheme::Lm
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PhraseListRequest {
    tokens: Vec<String>,
}

async fn healthz(State(app): Shared) -> Json<Value> {
    Json(json!({ "status": "ok", "backends": app.store.backends().ids() }))
}

async fn create(State(app): Shared, body: Bytes) -> ApiResult<impl IntoResponse> {
    let req: CreateRequest = parse_body(&body)?;
    let config = merged_config(&app.defaults, req.config)?;
    let session = blocking(app.store.clone(), move |s| {
        s.create_session(&req.start, req.scheme, config)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(session)))
}

async fn list(State(app): Shared) -> Json<Value> {
    Json(json!({ "sessions": app.store.list() }))
}

async fn show(State(app): Shared, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(app.store.clone(), move |s| s.get(&id)).await?))
}

async fn edit_phrase_list(State(app): Shared, Path(id): Path<String>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let req: PhraseListRequest = parse_body(&body)?;
    let (index, attempt) = blocking(app.store.clone(), move |s| s.edit_phrase_list(&id, &req.tokens)).await?;
    Ok((StatusCode::CREATED, Json(json!({ "index": index, "attempt": attempt }))))
}

async fn stop(State(app): Shared, Path((id, k)): Path<(String, String)>) -> ApiResult<impl IntoResponse> {
    let k = attempt_index(&k)?;
    Ok(Json(
        blocking(app.store.clone(), move |s| s.generate_stop_for(&id, k)).await?,
    ))
}

async fn infill_step(State(app): Shared, Path((id, k)): Path<(String, String)>) -> ApiResult<impl IntoResponse> {
    let k = attempt_index(&k)?;
    Ok(Json(blocking(app.store.clone(), move |s| s.infill_step(&id, k)).await?))
}

async fn infill_complete(State(app): Shared, Path((id, k)): Path<(String, String)>) -> ApiResult<impl IntoResponse> {
    let k = attempt_index(&k)?;
    let story = blocking(app.store.clone(), move |s| s.infill_complete(&id, k)).await?;
    Ok(Json(json!({ "story": story })))
}

async fn score(State(app): Shared, Path((id, k)): Path<(String, String)>) -> ApiResult<impl IntoResponse> {
    let k = attempt_index(&k)?;
    Ok(Json(
        blocking(app.store.clone(), move |s| s.score_attempt(&id, k)).await?,
    ))
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route")
}

pub fn router(store: Arc<SessionStore>, options: &ServiceOptions) -> Router {
    let api = Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create).get(list))
        .route("/sessions/{id}", get(show))
        .route("/sessions/{id}/phrase-list", post(edit_phrase_list))
        .route("/sessions/{id}/attempts/{k}/stop", post(stop))
        .route("/sessions/{id}/attempts/{k}/infill-step", post(infill_step))
        .route("/sessions/{id}/attempts/{k}/infill-complete", post(infill_complete))
        .route("/sessions/{id}/attempts/{k}/score", post(score))
        .with_state(Arc::new(AppState {
            store,
            defaults: serde_json::to_value(&options.default_config).expect("config serializes"),
        }));
    let app = match &options.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(not_found),
    };
    if options.cors {
        app.layer(CorsLayer::permissive())
    } else {
        app
    }
}

/// Serve until ctrl-c.
pub async fn serve(listener: tokio::net::TcpListener, app: Router) -> std::io::Result<()> {
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
