//! HTTP API over the agent: sessions, chat with background tool jobs
//! streamed as server-sent events, dataset and conditions views, sample
//! questions and transcript export.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, Method, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{delete, get, post, put};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use prescribe_core::agent::{run_job, AgentContext, AgentError, AgentTurnResult, PendingJob, Session};
use prescribe_core::dataset::Value;
use prescribe_core::events::SessionEvent;
use prescribe_core::transcript::{render_html, render_json};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::{watch, Semaphore};
use tower_http::cors::{AllowOrigin, CorsLayer};
use tower_http::services::ServeDir;

pub const DEFAULT_WORKERS: usize = 2;
pub const PREVIEW_ROWS: usize = 20;
const LAST_EVENT_ID: &str = "last-event-id";
pub const DEFAULT_UI_ORIGIN: &str = "http://localhost:5173";

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("no dataset loaded")]
    NoDataset,
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("message text must not be empty")]
    EmptyText,
    #[error("{0}")]
    Invalid(String),
    #[error("unsupported transcript format `{0}` (expected html or json)")]
    BadFormat(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl ApiError {
    fn status(&self) -> StatusCode {
        match self {
            ApiError::NoDataset => StatusCode::SERVICE_UNAVAILABLE,
            ApiError::UnknownSession(_) | ApiError::UnknownColumn(_) => StatusCode::NOT_FOUND,
            ApiError::EmptyText | ApiError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::BadFormat(_) => StatusCode::BAD_REQUEST,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<AgentError> for ApiError {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::UnknownColumn(c) => ApiError::UnknownColumn(c),
            other => ApiError::Invalid(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// One session plus a watch channel carrying its latest event seq.
struct SessionHandle {
    session: Arc<tokio::sync::Mutex<Session>>,
    seq: watch::Sender<u64>,
}

impl SessionHandle {
    fn publish(&self, session: &Session) {
        self.seq.send_replace(session.events.last_seq());
    }
}

#[derive(Debug, Clone)]
pub struct ServerOptions {
    pub workers: usize,
    pub cors_origins: Vec<String>,
    pub ui_dir: Option<PathBuf>,
}

impl Default for ServerOptions {
    fn default() -> Self {
        ServerOptions {
            workers: DEFAULT_WORKERS,
            cors_origins: vec![DEFAULT_UI_ORIGIN.to_string()],
            ui_dir: None,
        }
    }
}

struct Shared {
    context: RwLock<Option<Arc<AgentContext>>>,
    sessions: Mutex<HashMap<String, Arc<SessionHandle>>>,
    jobs: Semaphore,
}

#[derive(Clone)]
pub struct AppState {
    shared: Arc<Shared>,
}

impl AppState {
    /// `context` is `None` when the server runs without a dataset.
    pub fn new(context: Option<AgentContext>, workers: usize) -> Self {
        AppState {
            shared: Arc::new(Shared {
                context: RwLock::new(context.map(Arc::new)),
                sessions: Mutex::new(HashMap::new()),
                jobs: Semaphore::new(workers.max(1)),
            }),
        }
    }

    fn context(&self) -> ApiResult<Arc<AgentContext>> {
        self.shared
            .context
            .read()
            .expect("context lock")
            .clone()
            .ok_or(ApiError::NoDataset)
    }

    fn handle(&self, id: &str) -> ApiResult<Arc<SessionHandle>> {
        self.context()?;
        self.shared
            .sessions
            .lock()
            .expect("session table lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::UnknownSession(id.to_string()))
    }

    fn all_handles(&self) -> Vec<Arc<SessionHandle>> {
        self.shared
            .sessions
            .lock()
            .expect("session table lock")
            .values()
            .cloned()
            .collect()
    }
}

pub fn router(state: AppState, opts: &ServerOptions) -> Router {
    let origins: Vec<HeaderValue> = opts
        .cors_origins
        .iter()
        .filter_map(|o| HeaderValue::from_str(o).ok())
        .collect();
    let cors = CorsLayer::new()
        .allow_origin(AllowOrigin::list(origins))
        .allow_methods([Method::GET, Method::POST, Method::PUT, Method::DELETE])
        .allow_headers([header::CONTENT_TYPE, header::HeaderName::from_static(LAST_EVENT_ID)]);
    let api = Router::new()
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}/messages", post(post_message))
        .route("/api/sessions/{id}/events", get(events))
        .route(
            "/api/sessions/{id}/conditions",
            get(get_conditions).put(put_conditions).delete(clear_conditions),
        )
        .route("/api/sessions/{id}/conditions/{column}", delete(delete_condition))
        .route("/api/sessions/{id}/sample-questions", get(sample_questions))
        .route("/api/sessions/{id}/transcript", get(transcript))
        .route("/api/dataset", get(get_dataset))
        .route("/api/dataset/columns/{name}", put(put_column))
        .with_state(state);
    let app = match &opts.ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(|| async { "prescribe agent API; see /api/dataset" })),
    };
    app.layer(cors)
}

pub async fn serve(listener: tokio::net::TcpListener, state: AppState, opts: ServerOptions) -> std::io::Result<()> {
    axum::serve(listener, router(state, &opts)).await
}

#[derive(Serialize)]
struct Created {
    session_id: String,
}

async fn create_session(State(state): State<AppState>) -> ApiResult<Json<Created>> {
    let ctx = state.context()?;
    let id = uuid::Uuid::new_v4().to_string();
    let (seq, _) = watch::channel(0);
    let handle = Arc::new(SessionHandle {
        session: Arc::new(tokio::sync::Mutex::new(Session::new(id.clone(), ctx))),
        seq,
    });
    state
        .shared
        .sessions
        .lock()
        .expect("session table lock")
        .insert(id.clone(), handle);
    Ok(Json(Created { session_id: id }))
}

#[derive(Deserialize)]
struct MessageBody {
    #[serde(default)]
    text: String,
}

async fn post_message(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Option<Json<MessageBody>>,
) -> ApiResult<Json<AgentTurnResult>> {
    let handle = state.handle(&id)?;
    let text = body.map(|b| b.0.text).unwrap_or_default();
    if text.trim().is_empty() {
        return Err(ApiError::EmptyText);
    }
    let guard = handle.session.clone().lock_owned().await;
    let h = handle.clone();
    let (turn, job) = tokio::task::spawn_blocking(move || {
        let mut session = guard;
        let out = session.handle_query(&text);
        h.publish(&session);
        out
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))?;
    if let Some(job) = job {
        tokio::spawn(run_in_pool(state.clone(), handle, job));
    }
    Ok(Json(turn))
}

async fn run_in_pool(state: AppState, handle: Arc<SessionHandle>, job: PendingJob) {
    let Ok(_permit) = state.shared.jobs.acquire().await else {
        return;
    };
    let ctx = handle.session.lock().await.context().clone();
    let j = job.clone();
    let outcome = tokio::task::spawn_blocking(move || run_job(&ctx, &j)).await;
    let guard = handle.session.clone().lock_owned().await;
    let h = handle.clone();
    let _ = tokio::task::spawn_blocking(move || {
        let mut session = guard;
        let outcome = outcome.unwrap_or_else(|e| {
            Err(prescribe_core::tools::ToolError::Aborted(e.to_string()))
        });
        session.complete_job(&job, outcome);
        h.publish(&session);
    })
    .await;
}

#[derive(Deserialize)]
struct EventsQuery {
    after: Option<u64>,
}

fn to_sse(e: &SessionEvent) -> Event {
    Event::default()
        .event(e.kind.as_str())
        .id(e.seq.to_string())
        .data(serde_json::to_string(e).expect("serializable event"))
}

async fn events(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
    headers: HeaderMap,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let handle = state.handle(&id)?;
    let after = headers
        .get(LAST_EVENT_ID)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok())
        .or(q.after)
        .unwrap_or(0);
    let rx = handle.seq.subscribe();
    let stream = stream::unfold(
        (handle, after, rx, VecDeque::<SessionEvent>::new()),
        |(handle, mut last, mut rx, mut buf)| async move {
            loop {
                if let Some(e) = buf.pop_front() {
                    last = e.seq;
                    return Some((Ok(to_sse(&e)), (handle, last, rx, buf)));
                }
                rx.mark_unchanged();
                buf.extend(handle.session.lock().await.events.since(last).iter().cloned());
                if buf.is_empty() && rx.changed().await.is_err() {
                    return None;
                }
            }
        },
    );
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

#[derive(Serialize)]
struct Conditions {
    conditions: BTreeMap<String, Value>,
}

async fn get_conditions(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Conditions>> {
    let handle = state.handle(&id)?;
    let conditions = handle.session.lock().await.params.snapshot();
    Ok(Json(Conditions { conditions }))
}

fn json_to_value(name: &str, v: &serde_json::Value) -> ApiResult<Value> {
    match v {
        serde_json::Value::Number(n) => n
            .as_f64()
            .map(Value::Number)
            .ok_or_else(|| ApiError::Invalid(format!("`{name}` is not a finite number"))),
        serde_json::Value::Bool(b) => Ok(Value::Bool(*b)),
        serde_json::Value::String(s) => Ok(Value::Text(s.clone())),
        _ => Err(ApiError::Invalid(format!("`{name}` must be a number, boolean or string"))),
    }
}

/// Body: an object mapping column (or system parameter) names to values.
/// All entries are validated before any is stored.
async fn put_conditions(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Option<Json<serde_json::Map<String, serde_json::Value>>>,
) -> ApiResult<Json<Conditions>> {
    let handle = state.handle(&id)?;
    let Some(Json(body)) = body else {
        return Err(ApiError::Invalid("body must be a JSON object".into()));
    };
    let values = body
        .iter()
        .map(|(k, v)| Ok((k.clone(), json_to_value(k, v)?)))
        .collect::<ApiResult<Vec<_>>>()?;
    let mut session = handle.session.lock().await;
    let mut trial = Session::new("validation", session.context().clone());
    for (k, v) in &values {
        trial.set_condition(k, v.clone())?;
    }
    for (k, v) in values {
        session.set_condition(&k, v)?;
    }
    handle.publish(&session);
    Ok(Json(Conditions {
        conditions: session.params.snapshot(),
    }))
}

async fn clear_conditions(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Conditions>> {
    let handle = state.handle(&id)?;
    let mut session = handle.session.lock().await;
    let conditions = session.clear_conditions();
    handle.publish(&session);
    Ok(Json(Conditions { conditions }))
}

async fn delete_condition(
    State(state): State<AppState>,
    Path((id, column)): Path<(String, String)>,
) -> ApiResult<Json<Conditions>> {
    let handle = state.handle(&id)?;
    let mut session = handle.session.lock().await;
    let conditions = session.remove_condition(&column)?;
    handle.publish(&session);
    Ok(Json(Conditions { conditions }))
}

#[derive(Serialize)]
struct Questions {
    questions: Vec<String>,
}

async fn sample_questions(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Questions>> {
    let handle = state.handle(&id)?;
    let questions = handle.session.lock().await.sample_questions();
    Ok(Json(Questions { questions }))
}

#[derive(Deserialize)]
struct TranscriptQuery {
    format: Option<String>,
}

async fn transcript(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<TranscriptQuery>,
) -> ApiResult<Response> {
    let handle = state.handle(&id)?;
    let format = q.format.unwrap_or_else(|| "html".into());
    let session = handle.session.lock().await;
    match format.as_str() {
        "html" => {
            let title = format!("{} conversation", session.context().meta.title);
            Ok(Html(render_html(&title, &session.transcript)).into_response())
        }
        "json" => Ok((
            [(header::CONTENT_TYPE, "application/json")],
            render_json(&session.transcript),
        )
            .into_response()),
        other => Err(ApiError::BadFormat(other.to_string())),
    }
}

#[derive(Serialize)]
struct DatasetView {
    metadata: prescribe_core::dataset::DatasetMetadata,
    /// Columns with extractors that are currently enabled.
    active_columns: Vec<String>,
    row_count: usize,
    preview: Vec<BTreeMap<String, Option<Value>>>,
}

fn dataset_view(ctx: &AgentContext) -> DatasetView {
    DatasetView {
        metadata: ctx.meta.clone(),
        active_columns: ctx.columns.clone(),
        row_count: ctx.table.row_count(),
        preview: ctx.table.preview(PREVIEW_ROWS),
    }
}

async fn get_dataset(State(state): State<AppState>) -> ApiResult<Json<DatasetView>> {
    let ctx = state.context()?;
    Ok(Json(dataset_view(&ctx)))
}

#[derive(Deserialize)]
struct ColumnToggle {
    supported: bool,
}

async fn put_column(
    State(state): State<AppState>,
    Path(name): Path<String>,
    body: Option<Json<ColumnToggle>>,
) -> ApiResult<Json<DatasetView>> {
    let Some(Json(toggle)) = body else {
        return Err(ApiError::Invalid("body must be {\"supported\": bool}".into()));
    };
    let ctx = state.context()?;
    let mut meta = ctx.meta.clone();
    let col = meta
        .column_mut(&name)
        .ok_or_else(|| ApiError::UnknownColumn(name.clone()))?;
    if name == ctx.meta.action_column || name == ctx.meta.outcome_column {
        return Err(ApiError::Invalid(format!("`{name}` is the action or outcome column")));
    }
    col.supported = toggle.supported;
    let next = Arc::new(ctx.with_meta(meta));
    *state.shared.context.write().expect("context lock") = Some(next.clone());
    for handle in state.all_handles() {
        let mut session = handle.session.lock().await;
        session.set_context(next.clone());
        handle.publish(&session);
    }
    Ok(Json(dataset_view(&next)))
}
