//! HTTP API over sessions.
//!
//! Session operations are blocking, so handlers run them on the blocking
//! pool behind a per-session mutex. Event reads go straight to the shared
//! event log and never wait for that mutex.

use std::collections::{HashMap, VecDeque};
use std::convert::Infallible;
use std::fs;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::net::TcpListener;

use super::engine::{allowed_phases, ActionOutcome, RuntimeFactory, Session, SessionError};
use super::state::{Phase, SessionConfig, SessionEvent};
use super::store::{EventLog, StoreError};
use crate::runtime_tools::DEFAULT_LOG_TAIL;

pub const DEFAULT_BIND: &str = "127.0.0.1:8700";
/// Longest a long-poll read of the event log may wait.
pub const MAX_WAIT_MS: u64 = 30_000;

struct Handle {
    session: Mutex<Session>,
    log: Arc<EventLog>,
}

/// Service state: the workspace root and the sessions opened so far.
pub struct AppState {
    root: PathBuf,
    factory: Arc<dyn RuntimeFactory>,
    sessions: Mutex<HashMap<String, Arc<Handle>>>,
}

impl AppState {
    pub fn new(root: impl Into<PathBuf>, factory: Arc<dyn RuntimeFactory>) -> Arc<Self> {
        Arc::new(Self {
            root: root.into(),
            factory,
            sessions: Mutex::new(HashMap::new()),
        })
    }

    fn insert(&self, session: Session) -> Arc<Handle> {
        let handle = Arc::new(Handle {
            log: session.events(),
            session: Mutex::new(session),
        });
        let id = handle.session.lock().expect("session poisoned").id().to_owned();
        self.sessions
            .lock()
            .expect("registry poisoned")
            .insert(id, Arc::clone(&handle));
        handle
    }

    /// Open sessions come from memory; others are loaded from disk once.
    fn handle(&self, id: &str) -> Result<Arc<Handle>, ApiError> {
        if let Some(h) = self.sessions.lock().expect("registry poisoned").get(id) {
            return Ok(Arc::clone(h));
        }
        let session = Session::open(&self.root, id, self.factory.as_ref()).map_err(|e| match e {
            SessionError::InvalidId(_) | SessionError::Store(StoreError::NotFound(_)) => ApiError::unknown(id),
            other => ApiError::from(other),
        })?;
        Ok(self.insert(session))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    detail: Value,
}

impl ApiError {
    fn unknown(id: &str) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            code: "unknown_session",
            message: format!("unknown session {id}"),
            detail: Value::Null,
        }
    }

    fn invalid(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            code: "invalid_body",
            message: message.into(),
            detail: Value::Null,
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code: "internal",
            message: message.into(),
            detail: Value::Null,
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let message = e.to_string();
        let (status, code, detail) = match &e {
            SessionError::WrongPhase { phase, allowed, .. } => (
                StatusCode::CONFLICT,
                "wrong_phase",
                json!({"phase": phase, "allowed": allowed}),
            ),
            SessionError::WorkspaceCollision(_) => (StatusCode::CONFLICT, "session_exists", Value::Null),
            SessionError::Invalid(_) | SessionError::InvalidId(_) | SessionError::Config(_) => {
                (StatusCode::UNPROCESSABLE_ENTITY, "invalid_body", Value::Null)
            }
            SessionError::Missing(what) => (StatusCode::NOT_FOUND, "missing_artifact", json!({"artifact": what})),
            SessionError::Operation(_) => (StatusCode::BAD_GATEWAY, "operation_failed", Value::Null),
            SessionError::Store(StoreError::NotFound(_)) => (StatusCode::NOT_FOUND, "unknown_session", Value::Null),
            SessionError::Store(_) | SessionError::Io { .. } => {
                (StatusCode::INTERNAL_SERVER_ERROR, "internal", Value::Null)
            }
        };
        Self {
            status,
            code,
            message,
            detail,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({"error": self.message, "code": self.code});
        if !self.detail.is_null() {
            body["detail"] = self.detail;
        }
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// JSON body; an empty body reads as `{}`. Anything unparseable is a 422.
fn parse_body<T: DeserializeOwned>(bytes: &Bytes) -> ApiResult<T> {
    let text = if bytes.iter().all(u8::is_ascii_whitespace) {
        &b"{}"[..]
    } else {
        &bytes[..]
    };
    serde_json::from_slice(text).map_err(|e| ApiError::invalid(e.to_string()))
}

/// Run `f` on the session under its lock, on the blocking pool.
async fn with_session<T, F>(handle: Arc<Handle>, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&mut Session) -> Result<T, SessionError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || {
        let mut session = handle.session.lock().map_err(|_| ApiError::internal("session lock poisoned"))?;
        f(&mut session).map_err(ApiError::from)
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateBody {
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    config: Option<SessionConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MessageBody {
    text: String,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FixBody {
    #[serde(default)]
    issue: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
struct EventsQuery {
    #[serde(default)]
    after: u64,
    #[serde(default)]
    wait_ms: u64,
}

#[derive(Debug, Default, Deserialize)]
struct LogsQuery {
    #[serde(default)]
    tail: Option<usize>,
}

/// Compact session description returned by create and get.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub phase: Phase,
    pub spec_versions: usize,
    pub tree_versions: usize,
    pub fix_iterations: u32,
    pub awaiting_continuation: bool,
    pub last_seq: u64,
    /// Operations the phase allows.
    pub actions: Vec<String>,
}

const ACTIONS: [&str; 8] = ["finalize", "generate", "run", "status", "logs", "probe", "fix", "close"];

fn summary(s: &Session) -> SessionSummary {
    let st = s.state();
    SessionSummary {
        session_id: st.session_id.clone(),
        phase: st.phase,
        spec_versions: st.artifacts.spec_versions.len(),
        tree_versions: st.artifacts.tree_versions.len(),
        fix_iterations: st.fix.iterations,
        awaiting_continuation: st.fix.awaiting_continuation,
        last_seq: s.events().last_seq(),
        actions: ACTIONS
            .iter()
            .filter(|a| allowed_phases(a).contains(&st.phase))
            .map(|a| a.to_string())
            .collect(),
    }
}

async fn create_session(State(app): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let body: CreateBody = parse_body(&body)?;
    let app2 = Arc::clone(&app);
    let session = tokio::task::spawn_blocking(move || {
        Session::create(&app2.root, body.id, body.config.unwrap_or_default(), app2.factory.as_ref())
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;
    let s = summary(&session);
    app.insert(session);
    Ok((StatusCode::CREATED, Json(s)).into_response())
}

async fn list_sessions(State(app): State<Arc<AppState>>) -> ApiResult<Json<Vec<String>>> {
    let mut ids: Vec<String> = match fs::read_dir(&app.root) {
        Ok(rd) => rd
            .filter_map(Result::ok)
            .filter(|e| e.path().join(super::store::STATE_FILE).is_file())
            .filter_map(|e| e.file_name().into_string().ok())
            .collect(),
        Err(_) => Vec::new(),
    };
    ids.sort();
    Ok(Json(ids))
}

async fn get_session(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<SessionSummary>> {
    let h = app.handle(&id)?;
    with_session(h, |s| Ok(summary(s))).await.map(Json)
}

async fn post_message(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<ActionOutcome>> {
    let h = app.handle(&id)?;
    let body: MessageBody = parse_body(&body)?;
    with_session(h, move |s| s.handle_user_message(&body.text)).await.map(Json)
}

async fn action(
    app: Arc<AppState>,
    id: String,
    f: impl FnOnce(&mut Session) -> Result<ActionOutcome, SessionError> + Send + 'static,
) -> ApiResult<Json<ActionOutcome>> {
    let h = app.handle(&id)?;
    with_session(h, f).await.map(Json)
}

async fn finalize(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<ActionOutcome>> {
    action(app, id, Session::finalize).await
}

async fn generate(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<ActionOutcome>> {
    action(app, id, Session::generate_code).await
}

async fn run(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<ActionOutcome>> {
    action(app, id, Session::run).await
}

async fn close(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<ActionOutcome>> {
    action(app, id, Session::close).await
}

async fn probe(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<ActionOutcome>> {
    action(app, id, |s| {
        let (mut outcome, report) = s.probe()?;
        if let Some(r) = report {
            outcome.result = json!({"passed": r.passed, "failed": r.failed, "report": r});
        }
        Ok(outcome)
    })
    .await
}

async fn fix(State(app): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<ActionOutcome>> {
    let h = app.handle(&id)?;
    let body: FixBody = parse_body(&body)?;
    with_session(h, move |s| {
        let record = s.fix_loop(body.issue.as_deref())?;
        Ok(ActionOutcome {
            ok: record.resolved,
            phase: s.phase(),
            result: json!({
                "iterations": record.iterations,
                "resolved": record.resolved,
                "awaiting_continuation": record.awaiting_continuation,
                "exhausted": record.exhausted,
                "summaries": record.summaries,
            }),
            events: record.events,
        })
    })
    .await
    .map(Json)
}

async fn status(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let h = app.handle(&id)?;
    with_session(h, |s| s.status().map(|st| json!(st))).await.map(Json)
}

async fn logs(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<LogsQuery>,
) -> ApiResult<Json<Value>> {
    let h = app.handle(&id)?;
    let tail = q.tail.unwrap_or(DEFAULT_LOG_TAIL).clamp(1, 10_000);
    with_session(h, move |s| {
        let (bundle, summaries) = s.logs(tail)?;
        Ok(json!({"logs": bundle, "error_summaries": summaries}))
    })
    .await
    .map(Json)
}

async fn spec(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let h = app.handle(&id)?;
    let text = with_session(h, |s| s.spec_text()).await?;
    Ok(([(header::CONTENT_TYPE, "application/yaml")], text).into_response())
}

async fn tree(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let h = app.handle(&id)?;
    with_session(h, |s| s.tree_listing().map(|t| json!(t))).await.map(Json)
}

async fn probe_report(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let h = app.handle(&id)?;
    with_session(h, |s| s.probe_report().map(|r| json!(r))).await.map(Json)
}

async fn export(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let h = app.handle(&id)?;
    with_session(h, |s| Ok(s.export())).await.map(Json)
}

/// NDJSON of the events after `after`. With `wait_ms`, an empty read waits
/// up to that long for the next append.
async fn events(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
) -> ApiResult<Response> {
    let h = app.handle(&id)?;
    let mut evs = h.log.after(q.after);
    if evs.is_empty() && q.wait_ms > 0 {
        let mut rx = h.log.subscribe();
        let wait = Duration::from_millis(q.wait_ms.min(MAX_WAIT_MS));
        let _ = tokio::time::timeout(wait, async {
            while *rx.borrow_and_update() <= q.after {
                if rx.changed().await.is_err() {
                    break;
                }
            }
        })
        .await;
        evs = h.log.after(q.after);
    }
    let mut body = String::new();
    for e in &evs {
        body.push_str(&serde_json::to_string(e).expect("event serializes"));
        body.push('\n');
    }
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

fn last_event_id(headers: &HeaderMap) -> Option<u64> {
    headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|s| s.trim().parse().ok())
}

/// Server-sent events from a cursor; `Last-Event-ID` takes precedence so
/// reconnecting clients resume where they stopped.
async fn event_stream(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
    headers: HeaderMap,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let h = app.handle(&id)?;
    let cursor = last_event_id(&headers).unwrap_or(q.after);
    let log = Arc::clone(&h.log);
    let rx = log.subscribe();
    let init: (Arc<EventLog>, _, u64, VecDeque<SessionEvent>) = (log, rx, cursor, VecDeque::new());
    let s = stream::unfold(init, |(log, mut rx, mut cursor, mut buf)| async move {
        loop {
            if let Some(e) = buf.pop_front() {
                cursor = e.seq;
                let ev = Event::default()
                    .id(e.seq.to_string())
                    .event("session_event")
                    .data(serde_json::to_string(&e).expect("event serializes"));
                return Some((Ok(ev), (log, rx, cursor, buf)));
            }
            buf.extend(log.after(cursor));
            if buf.is_empty() && rx.changed().await.is_err() {
                return None;
            }
        }
    });
    Ok(Sse::new(s).keep_alive(KeepAlive::default()))
}

async fn health() -> Json<Value> {
    Json(json!({"ok": true, "version": env!("CARGO_PKG_VERSION")}))
}

pub fn router(app: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/messages", post(post_message))
        .route("/sessions/{id}/events", get(events))
        .route("/sessions/{id}/events/stream", get(event_stream))
        .route("/sessions/{id}/spec", get(spec))
        .route("/sessions/{id}/tree", get(tree))
        .route("/sessions/{id}/probe-report", get(probe_report))
        .route("/sessions/{id}/export", get(export))
        .route("/sessions/{id}/finalize", post(finalize))
        .route("/sessions/{id}/generate", post(generate))
        .route("/sessions/{id}/run", post(run))
        .route("/sessions/{id}/status", get(status))
        .route("/sessions/{id}/logs", get(logs))
        .route("/sessions/{id}/probe", post(probe))
        .route("/sessions/{id}/fix", post(fix))
        .route("/sessions/{id}/close", post(close))
        .with_state(app)
}

/// Serve until the listener fails.
pub async fn serve(listener: TcpListener, app: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(app)).await
}
