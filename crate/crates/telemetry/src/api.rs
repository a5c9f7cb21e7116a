//! HTTP routes.

use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use axum::extract::{Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use tokio_stream::wrappers::BroadcastStream;
use tokio_stream::{Stream, StreamExt};
use tower_http::services::ServeDir;

use crate::events::Event;
use crate::hub::{ApiError, Hub, PredictRequest, RelayRequest};
use crate::Clock;

pub const TOKEN_HEADER: &str = "x-api-token";

const PLACEHOLDER_UI: &str = "<!doctype html><title>RUL telemetry</title>\
<p>No dashboard assets installed. API: <code>/api/pins</code>, <code>/api/predict</code>, \
<code>/api/relay</code>, <code>/api/events</code>, <code>/api/model</code>.</p>";

#[derive(Clone)]
pub struct AppState {
    hub: Arc<Mutex<Hub>>,
    clock: Arc<dyn Clock>,
}

impl AppState {
    pub fn new(hub: Hub, clock: Arc<dyn Clock>) -> Self {
        AppState {
            hub: Arc::new(Mutex::new(hub)),
            clock,
        }
    }

    pub fn hub(&self) -> MutexGuard<'_, Hub> {
        // A panic mid-request leaves the hub consistent enough to keep serving.
        self.hub.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn now(&self) -> f64 {
        self.clock.now()
    }

    /// One periodic tick at the current clock reading.
    pub fn tick(&self) -> std::io::Result<()> {
        let now = self.now();
        self.hub().tick(now)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

fn presented_token(headers: &HeaderMap) -> Option<&str> {
    if let Some(v) = headers.get(TOKEN_HEADER) {
        return v.to_str().ok();
    }
    headers
        .get(axum::http::header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
}

async fn get_pins(State(app): State<AppState>) -> Response {
    Json(app.hub().pins()).into_response()
}

async fn get_model(State(app): State<AppState>) -> Result<Response, ApiError> {
    Ok(Json(app.hub().model_info()?).into_response())
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(format!("invalid body: {e}")))
}

async fn post_predict(State(app): State<AppState>, headers: HeaderMap, body: axum::body::Bytes) -> Result<Response, ApiError> {
    let now = app.now();
    let mut hub = app.hub();
    hub.authorize(presented_token(&headers))?;
    let request: PredictRequest = parse_body(&body)?;
    Ok(Json(hub.predict(&request, now)?).into_response())
}

async fn post_relay(State(app): State<AppState>, headers: HeaderMap, body: axum::body::Bytes) -> Result<Response, ApiError> {
    let now = app.now();
    let mut hub = app.hub();
    hub.authorize(presented_token(&headers))?;
    let request: RelayRequest = parse_body(&body)?;
    Ok(Json(hub.relay(&request, now)?).into_response())
}

#[derive(Debug, Deserialize)]
struct Resume {
    since: Option<u64>,
}

fn sse_event(e: &Event) -> SseEvent {
    SseEvent::default()
        .event(e.body.kind())
        .id(e.seq.to_string())
        .data(serde_json::to_string(e).expect("events serialize"))
}

/// Backlog after `since`, then live events. A subscriber that falls too far
/// behind is disconnected and resumes with its last id.
pub fn event_stream(app: &AppState, since: u64) -> impl Stream<Item = Result<SseEvent, Infallible>> + use<> {
    let (backlog, rx) = app.hub().subscribe(since);
    let mut last = backlog.last().map_or(since, |e| e.seq);
    let live = BroadcastStream::new(rx)
        .take_while(Result::is_ok)
        .filter_map(move |r| {
            let e = r.ok()?;
            if e.seq <= last {
                return None;
            }
            last = e.seq;
            Some(e)
        });
    tokio_stream::iter(backlog)
        .chain(live)
        .map(|e| Ok(sse_event(&e)))
}

async fn get_events(State(app): State<AppState>, Query(q): Query<Resume>, headers: HeaderMap) -> Response {
    let since = q.since.or_else(|| {
        headers
            .get("last-event-id")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse().ok())
    });
    Sse::new(event_stream(&app, since.unwrap_or(0)))
        .keep_alive(KeepAlive::new().interval(Duration::from_secs(15)))
        .into_response()
}

pub fn router(app: AppState, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/pins", get(get_pins))
        .route("/api/model", get(get_model))
        .route("/api/predict", post(post_predict))
        .route("/api/relay", post(post_relay))
        .route("/api/events", get(get_events));
    let api = match ui_dir {
        Some(dir) if dir.is_dir() => api.nest_service("/ui", ServeDir::new(dir).append_index_html_on_directories(true)),
        _ => api.route("/ui", get(|| async { Html(PLACEHOLDER_UI) })),
    };
    api.with_state(app)
}
