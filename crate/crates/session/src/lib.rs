//! Live play sessions for human participants over JSON/HTTP.

mod session;
mod store;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path as UrlPath, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use banditlab_core::store::{dataset_to_jsonl, Provenance};
use banditlab_core::{EnvSpec, Variant};
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;

pub use session::{describe, ChoiceReply, Cursor, Event, HistoryItem, Session, SessionError, StateView, Status};
pub use store::{read_log, EventStore};

#[derive(Debug)]
pub struct ApiError(pub StatusCode, pub String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let code = match &e {
            SessionError::BadRequest(_) => StatusCode::BAD_REQUEST,
            SessionError::Stale { .. } | SessionError::Active => StatusCode::CONFLICT,
            SessionError::Gone(_) => StatusCode::GONE,
            SessionError::Corrupt(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(code, e.to_string())
    }
}

fn io_error(e: std::io::Error) -> ApiError {
    tracing::error!(error = %e, "event store failure");
    ApiError(StatusCode::INTERNAL_SERVER_ERROR, format!("event store: {e}"))
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

/// Shared service state. Each session has its own lock.
pub struct App {
    store: EventStore,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    token: Option<String>,
}

impl App {
    /// Open the data directory and rebuild every session from its log.
    pub fn open(data_dir: &Path, token: Option<String>) -> std::io::Result<Self> {
        let store = EventStore::open(data_dir)?;
        let mut sessions = HashMap::new();
        for id in store.ids()? {
            let events = store.read(&id)?;
            match Session::fold(&events) {
                Ok(s) => {
                    sessions.insert(id, Arc::new(Mutex::new(s)));
                }
                Err(e) => tracing::error!(session = %id, error = %e, "skipping unreadable session"),
            }
        }
        Ok(Self { store, sessions: RwLock::new(sessions), token })
    }

    fn get(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("no session {id}")))
    }

    fn authorize(&self, headers: &HeaderMap) -> Result<(), ApiError> {
        let Some(token) = &self.token else { return Ok(()) };
        let given = headers.get(header::AUTHORIZATION).and_then(|v| v.to_str().ok());
        if given == Some(format!("Bearer {token}").as_str()) {
            Ok(())
        } else {
            Err(ApiError(StatusCode::UNAUTHORIZED, "missing or wrong bearer token".into()))
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    pub env: String,
    pub seed: Option<u64>,
    pub group_id: Option<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreateReply {
    pub session_id: String,
    pub env: Variant,
    pub description: String,
    pub arm_labels: Vec<i64>,
    pub games: usize,
    pub rounds_per_game: usize,
    pub group_id: Option<u32>,
    pub next: Cursor,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChoiceRequest {
    pub arm: i64,
    /// Cursor the client believes it is at; a mismatch is a conflict.
    pub game: Option<usize>,
    pub round: Option<usize>,
    pub idempotency_key: Option<String>,
}

async fn create(
    State(app): State<Arc<App>>,
    headers: HeaderMap,
    body: Result<Json<CreateRequest>, axum::extract::rejection::JsonRejection>,
) -> Result<(StatusCode, Json<CreateReply>), ApiError> {
    app.authorize(&headers)?;
    let Json(req) = body.map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.body_text()))?;
    let variant: Variant = req.env.parse().map_err(|e: banditlab_core::domain::DomainError| {
        ApiError(StatusCode::BAD_REQUEST, e.to_string())
    })?;
    let id = uuid::Uuid::new_v4().simple().to_string();
    let seed = req.seed.unwrap_or_else(rand::random);
    let ev = Session::create_event(&id, variant, seed, req.group_id, now_ms())?;
    let s = Session::fold([&ev])?;
    app.store.append(&id, &ev, true).map_err(io_error)?;
    let spec: &EnvSpec = &s.spec;
    let reply = CreateReply {
        session_id: id.clone(),
        env: variant,
        description: describe(spec),
        arm_labels: spec.arm_labels(),
        games: s.games(),
        rounds_per_game: spec.horizon,
        group_id: s.group_id,
        next: Cursor { game: 1, round: 1 },
    };
    tracing::info!(session = %id, env = %variant, "session created");
    app.sessions.write().unwrap().insert(id, Arc::new(Mutex::new(s)));
    Ok((StatusCode::CREATED, Json(reply)))
}

async fn choose(
    State(app): State<Arc<App>>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
    body: Result<Json<ChoiceRequest>, axum::extract::rejection::JsonRejection>,
) -> Result<Json<ChoiceReply>, ApiError> {
    app.authorize(&headers)?;
    let handle = app.get(&id)?;
    let Json(req) = body.map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.body_text()))?;
    let key = req
        .idempotency_key
        .or_else(|| headers.get("idempotency-key").and_then(|v| v.to_str().ok()).map(str::to_string));
    let expected = match (req.game, req.round) {
        (Some(game), Some(round)) => Some(Cursor { game, round }),
        (None, None) => None,
        _ => return Err(ApiError(StatusCode::BAD_REQUEST, "give both game and round or neither".into())),
    };
    let mut s = handle.lock().await;
    if let Some(reply) = key.as_deref().and_then(|k| s.reply_for(k)) {
        return Ok(Json(reply.clone()));
    }
    let ev = s.choose(req.arm, expected, key, now_ms())?;
    app.store.append(&id, &ev, false).map_err(io_error)?;
    let reply = s.apply(&ev)?.expect("choice events produce a reply");
    Ok(Json(reply))
}

async fn abandon(
    State(app): State<Arc<App>>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
) -> Result<Json<StateView>, ApiError> {
    app.authorize(&headers)?;
    let handle = app.get(&id)?;
    let mut s = handle.lock().await;
    let ev = s.abandon(now_ms())?;
    app.store.append(&id, &ev, false).map_err(io_error)?;
    s.apply(&ev)?;
    Ok(Json(s.view()))
}

async fn state(
    State(app): State<Arc<App>>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
) -> Result<Json<StateView>, ApiError> {
    app.authorize(&headers)?;
    let handle = app.get(&id)?;
    let s = handle.lock().await;
    Ok(Json(s.view()))
}

async fn export(
    State(app): State<Arc<App>>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    app.authorize(&headers)?;
    let handle = app.get(&id)?;
    let s = handle.lock().await;
    let d = s.export()?;
    let body = dataset_to_jsonl(&d, &Provenance { learner: None, seeds: vec![s.seed] });
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

/// Routes of the service, with the web UI served from `ui_dir` if given.
pub fn router(app: Arc<App>, ui_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}/choices", post(choose))
        .route("/sessions/{id}/abandon", post(abandon))
        .route("/sessions/{id}/state", get(state))
        .route("/sessions/{id}/export", get(export))
        .with_state(app);
    match ui_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

#[derive(Clone, Debug)]
pub struct ServeConfig {
    pub addr: String,
    pub data_dir: PathBuf,
    pub token: Option<String>,
    pub ui_dir: Option<PathBuf>,
}

/// Run the service until ctrl-c.
pub async fn serve(cfg: ServeConfig) -> std::io::Result<()> {
    let app = Arc::new(App::open(&cfg.data_dir, cfg.token.clone())?);
    let listener = tokio::net::TcpListener::bind(&cfg.addr).await?;
    tracing::info!(addr = %listener.local_addr()?, data = %cfg.data_dir.display(), "serving sessions");
    axum::serve(listener, router(app, cfg.ui_dir.as_deref()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
