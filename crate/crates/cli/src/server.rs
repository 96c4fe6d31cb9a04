//! HTTP/JSON routes over the run ledger.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use groundwork_core::ledger::RunFilter;
use groundwork_core::service::{Service, ServiceError};
use groundwork_core::workflow::Decision;
use serde::Deserialize;
use serde_json::json;
use tower_http::services::ServeDir;

use crate::setup::CliError;

pub const ENV_API_TOKEN: &str = "GROUNDWORK_API_TOKEN";

#[derive(Clone)]
struct ApiState {
    svc: Arc<Service>,
    token: Option<Arc<str>>,
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let status = match e {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Ledger(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

/// Runs a blocking ledger read off the async workers.
async fn blocking<T, F>(svc: Arc<Service>, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Service) -> Result<T, ServiceError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&svc))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(ApiError::from)
}

async fn list_runs(
    State(st): State<ApiState>,
    Query(filter): Query<RunFilter>,
) -> Result<Response, ApiError> {
    let rows = blocking(st.svc, move |s| s.list_runs(&filter)).await?;
    Ok(Json(rows).into_response())
}

async fn get_run(State(st): State<ApiState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let view = blocking(st.svc, move |s| s.get_run(&id)).await?;
    Ok(Json(view).into_response())
}

async fn get_artifact(
    State(st): State<ApiState>,
    Path((id, name)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let text = blocking(st.svc, move |s| s.get_artifact(&id, &name)).await?;
    Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], text).into_response())
}

async fn get_report(
    State(st): State<ApiState>,
    Path((id, phase)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let report = blocking(st.svc, move |s| s.get_report(&id, &phase)).await?;
    Ok(Json(report).into_response())
}

#[derive(Debug, Deserialize)]
struct CheckpointBody {
    decision: Decision,
    #[serde(default)]
    decided_by: Option<String>,
}

async fn post_checkpoint(
    State(st): State<ApiState>,
    Path(id): Path<String>,
    Json(body): Json<CheckpointBody>,
) -> Result<Response, ApiError> {
    let by = body.decided_by.unwrap_or_else(|| "operator".into());
    let d = blocking(st.svc, move |s| s.post_checkpoint(&id, body.decision, &by)).await?;
    Ok(Json(d).into_response())
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    run: Option<String>,
    #[serde(default)]
    since: u64,
}

async fn events(
    State(st): State<ApiState>,
    Query(q): Query<EventsQuery>,
) -> Result<Response, ApiError> {
    let evs = blocking(st.svc, move |s| s.events(q.run.as_deref(), q.since)).await?;
    Ok(Json(evs).into_response())
}

async fn require_token(
    State(st): State<ApiState>,
    headers: HeaderMap,
    req: Request,
    next: Next,
) -> Response {
    if let Some(token) = &st.token {
        let presented = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token) {
            return ApiError(
                StatusCode::UNAUTHORIZED,
                "missing or wrong bearer token".into(),
            )
            .into_response();
        }
    }
    next.run(req).await
}

/// API routes, token-guarded when `token` is set. Dashboard assets, when
/// given, are served unguarded at every other path.
pub fn router(svc: Arc<Service>, token: Option<String>, assets: Option<PathBuf>) -> Router {
    let st = ApiState {
        svc,
        token: token.map(Arc::from),
    };
    let api = Router::new()
        .route("/runs", get(list_runs))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/artifacts/{name}", get(get_artifact))
        .route("/runs/{id}/reports/{phase}", get(get_report))
        .route("/runs/{id}/checkpoint", post(post_checkpoint))
        .route("/events", get(events))
        .route_layer(middleware::from_fn_with_state(st.clone(), require_token))
        .with_state(st);
    match assets {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// The token from the environment, or a fresh random one.
pub fn resolve_token(env: impl Fn(&str) -> Option<String>) -> (String, bool) {
    match env(ENV_API_TOKEN).filter(|t| !t.is_empty()) {
        Some(t) => (t, false),
        None => (hex::encode(rand::random::<[u8; 16]>()), true),
    }
}

pub fn bind(addr: SocketAddr) -> Result<std::net::TcpListener, CliError> {
    if !addr.ip().is_loopback() {
        return Err(CliError::Usage(format!(
            "refusing to bind non-loopback address {addr}"
        )));
    }
    let l = std::net::TcpListener::bind(addr)
        .map_err(|e| CliError::Usage(format!("cannot bind {addr}: {e}")))?;
    l.set_nonblocking(true)
        .map_err(|e| CliError::Usage(format!("cannot configure {addr}: {e}")))?;
    Ok(l)
}

/// Serves `app` on an already bound listener until the process exits.
pub fn serve_blocking(listener: std::net::TcpListener, app: Router) -> Result<(), CliError> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Failed(e.to_string()))?;
    rt.block_on(async move {
        let l = tokio::net::TcpListener::from_std(listener)
            .map_err(|e| CliError::Failed(e.to_string()))?;
        axum::serve(l, app)
            .await
            .map_err(|e| CliError::Failed(e.to_string()))
    })
}

/// Serves on a background thread; the thread ends with the process.
pub fn serve_in_background(listener: std::net::TcpListener, app: Router) {
    std::thread::spawn(move || {
        if let Err(e) = serve_blocking(listener, app) {
            tracing::error!("api server stopped: {e}");
        }
    });
}
