//! HTTP API for live digital-twin sessions.
//!
//! Every session sits behind its own lock, so mutations on one session are
//! serialized while sessions stay independent. Ticks are broadcast to
//! `/stream` subscribers as newline-delimited JSON.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream;
use pdp_twin::eval::rq4_scenarios;
use pdp_twin::runtime::{start_session, Frame, Mode, RuntimeError, Session};
use pdp_twin::{models, synth};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

/// Longest simulated span accepted by one `/tick` call, in seconds.
pub const MAX_TICK: f64 = 3600.0;

const STREAM_BUFFER: usize = 1024;

struct Entry {
    session: Mutex<Session>,
    frames: broadcast::Sender<Frame>,
}

#[derive(Clone, Default)]
pub struct AppState {
    sessions: Arc<Mutex<HashMap<u64, Arc<Entry>>>>,
    next: Arc<AtomicU64>,
}

impl AppState {
    fn entry(&self, id: u64) -> Result<Arc<Entry>, ApiError> {
        self.sessions.lock().expect("session table").get(&id).cloned().ok_or(ApiError::NotFound(id))
    }

    pub fn len(&self) -> usize {
        self.sessions.lock().expect("session table").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug)]
pub enum ApiError {
    NotFound(u64),
    BadRequest(String),
    Runtime(RuntimeError),
}

impl From<RuntimeError> for ApiError {
    fn from(e: RuntimeError) -> Self {
        ApiError::Runtime(e)
    }
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, msg) = match self {
            ApiError::NotFound(id) => (StatusCode::NOT_FOUND, format!("no session {id}")),
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, m),
            ApiError::Runtime(e) => {
                let status = match e {
                    RuntimeError::SessionClosed => StatusCode::CONFLICT,
                    RuntimeError::StrategyModelMismatch(_) | RuntimeError::NotControllable(_) => StatusCode::UNPROCESSABLE_ENTITY,
                    RuntimeError::Parse(_) | RuntimeError::Model(_) => StatusCode::BAD_REQUEST,
                    RuntimeError::Physio(_) => StatusCode::INTERNAL_SERVER_ERROR,
                };
                (status, e.to_string())
            }
        };
        (status, Json(ErrorBody { error: msg })).into_response()
    }
}

/// Body of `POST /api/sessions`. Omitted fields fall back to the bundled
/// physician/patient network, an empty strategy, the first complication
/// scenario and recommend-only mode.
#[derive(Debug, Default, Deserialize)]
pub struct CreateSession {
    pub model: Option<String>,
    pub strategy: Option<String>,
    pub scenario: Option<String>,
    pub mode: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub id: u64,
}

#[derive(Debug, Deserialize)]
pub struct ActionBody {
    pub action: String,
}

#[derive(Debug, Deserialize)]
pub struct TickBody {
    pub dt: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StreamFrame {
    pub t: f64,
    pub vitals: std::collections::BTreeMap<String, f64>,
    pub events: Vec<String>,
    pub actions: Vec<String>,
    pub settings: pdp_twin::physio::VentilatorSettings,
    pub recommendation: pdp_twin::runtime::Recommendation,
}

impl From<Frame> for StreamFrame {
    fn from(f: Frame) -> Self {
        Self { t: f.t, vitals: f.vitals, events: f.events, actions: f.actions, settings: f.settings, recommendation: f.recommendation }
    }
}

pub fn default_model() -> String {
    format!("{}\n{}", models::PHYSICIAN_GENERAL, models::PATIENT_DT)
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/sessions", post(create))
        .route("/api/sessions/{id}", axum::routing::delete(close))
        .route("/api/sessions/{id}/state", get(state_of))
        .route("/api/sessions/{id}/recommendation", get(recommendation))
        .route("/api/sessions/{id}/action", post(action))
        .route("/api/sessions/{id}/tick", post(tick))
        .route("/api/sessions/{id}/stream", get(stream_frames))
        .with_state(state)
}

async fn create(State(app): State<AppState>, body: Option<Json<CreateSession>>) -> Result<Json<Created>, ApiError> {
    let req = body.map(|b| b.0).unwrap_or_default();
    let mode = match req.mode.as_deref() {
        None => Mode::RecommendOnly,
        Some(m) => m.parse()?,
    };
    let model = req.model.unwrap_or_else(default_model);
    let strategy = req.strategy.unwrap_or_else(|| synth::Strategy::default().to_csv());
    let scenario = req.scenario.unwrap_or_else(|| rq4_scenarios()[0].to_text());
    let mut session = start_session(&model, &strategy, &scenario, mode)?;
    let id = app.next.fetch_add(1, Ordering::Relaxed) + 1;
    session.id = id;
    let (tx, _) = broadcast::channel(STREAM_BUFFER);
    app.sessions.lock().expect("session table").insert(id, Arc::new(Entry { session: Mutex::new(session), frames: tx }));
    log::info!("session {id} opened");
    Ok(Json(Created { id }))
}

async fn state_of(State(app): State<AppState>, Path(id): Path<u64>) -> Result<Response, ApiError> {
    let e = app.entry(id)?;
    let s = e.session.lock().expect("session");
    Ok(Json(s.state()).into_response())
}

async fn recommendation(State(app): State<AppState>, Path(id): Path<u64>) -> Result<Response, ApiError> {
    let e = app.entry(id)?;
    let s = e.session.lock().expect("session");
    if s.is_closed() {
        return Err(RuntimeError::SessionClosed.into());
    }
    Ok(Json(s.recommendation()).into_response())
}

async fn action(State(app): State<AppState>, Path(id): Path<u64>, Json(body): Json<ActionBody>) -> Result<Response, ApiError> {
    let e = app.entry(id)?;
    let mut s = e.session.lock().expect("session");
    Ok(Json(s.post_action(&body.action)?).into_response())
}

async fn tick(State(app): State<AppState>, Path(id): Path<u64>, Json(body): Json<TickBody>) -> Result<Response, ApiError> {
    if !(body.dt > 0.0 && body.dt <= MAX_TICK) {
        return Err(ApiError::BadRequest(format!("dt must be in (0, {MAX_TICK}]")));
    }
    let e = app.entry(id)?;
    let frames = e.session.lock().expect("session").tick(body.dt)?;
    for f in &frames {
        let _ = e.frames.send(f.clone());
    }
    let out: Vec<StreamFrame> = frames.into_iter().map(StreamFrame::from).collect();
    Ok(Json(out).into_response())
}

async fn close(State(app): State<AppState>, Path(id): Path<u64>) -> Result<Response, ApiError> {
    let e = app.sessions.lock().expect("session table").remove(&id).ok_or(ApiError::NotFound(id))?;
    let csv = e.session.lock().expect("session").close();
    log::info!("session {id} closed");
    Ok(([(header::CONTENT_TYPE, "text/csv")], csv).into_response())
}

async fn stream_frames(State(app): State<AppState>, Path(id): Path<u64>) -> Result<Response, ApiError> {
    let e = app.entry(id)?;
    let rx = e.frames.subscribe();
    drop(e);
    let body = stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(f) => {
                    let mut line = serde_json::to_vec(&StreamFrame::from(f)).unwrap_or_default();
                    line.push(b'\n');
                    return Some((Ok::<_, std::io::Error>(line), rx));
                }
                Err(broadcast::error::RecvError::Lagged(n)) => log::warn!("stream subscriber skipped {n} frames"),
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], Body::from_stream(body)).into_response())
}

/// Serve the API on `addr` until the process is stopped.
pub async fn serve(addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(AppState::default())).await
}
