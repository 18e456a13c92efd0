//! HTTP chat service. Each session holds a persona and a transcript; the
//! loaded model is shared read-only across sessions.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tower_http::cors::{Any, CorsLayer};
use tower_http::services::ServeDir;

use crate::corpus::{detokenize, tokenize, PersonaTrait, StopWordSet};
use crate::inference::{generate_response, DebugRecord, GenerationConfig};
use crate::lm::{rank_order, CandidateScorer, LanguageModel, ScoredCandidate};
use crate::model::SketchModel;

/// A trained model plus the optional candidate scorer and the persona
/// sets new sessions are drawn from.
pub struct LoadedModel {
    pub name: String,
    pub model: SketchModel,
    pub lm: Option<LanguageModel>,
    pub persona_pool: Vec<Vec<String>>,
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub generation: GenerationConfig,
    pub static_dir: Option<PathBuf>,
    /// Seed for persona sampling.
    pub seed: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            generation: GenerationConfig { beam_size: 10, ..GenerationConfig::default() },
            static_dir: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Human,
    Model,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
}

#[derive(Debug, Clone)]
pub struct Session {
    pub id: String,
    pub persona: Vec<String>,
    traits: Vec<PersonaTrait>,
    pub history: Vec<Turn>,
    pub created: u64,
    pub debug: bool,
}

pub struct AppState {
    model: Option<Arc<LoadedModel>>,
    config: ServiceConfig,
    sessions: Mutex<HashMap<String, Arc<tokio::sync::Mutex<Session>>>>,
    rng: Mutex<ChaCha8Rng>,
    stop: StopWordSet,
}

impl AppState {
    pub fn new(model: Option<LoadedModel>, config: ServiceConfig) -> Arc<Self> {
        Arc::new(AppState {
            model: model.map(Arc::new),
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(config.seed)),
            config,
            sessions: Mutex::new(HashMap::new()),
            stop: StopWordSet::default(),
        })
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, code, message: message.into() }
    }

    fn unavailable() -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "model_unavailable", "no model is loaded")
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "session_not_found", format!("unknown session {id}"))
    }

    fn validation(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "validation_error", message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal_error", message)
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    code: &'a str,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = Json(ErrorBody { error: &self.message, code: self.code });
        (self.status, body).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Default, Deserialize)]
pub struct CreateSessionRequest {
    pub persona: Option<Vec<String>>,
    #[serde(default)]
    pub debug: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreateSessionResponse {
    pub id: String,
    pub persona: Vec<String>,
}

#[derive(Debug, Deserialize)]
pub struct MessageRequest {
    pub text: String,
}

/// Debug details of one reply.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplyDebug {
    /// The winning beam's sketch with `@persona` slots.
    pub sketch: String,
    pub persona: Option<usize>,
    pub persona_text: Option<String>,
    /// Candidates best first.
    pub candidates: Vec<ScoredCandidate>,
    pub record: DebugRecord,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MessageResponse {
    pub reply: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub debug: Option<ReplyDebug>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub persona: Vec<String>,
    pub history: Vec<Turn>,
    pub created: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub checkpoint: Option<String>,
}

pub fn router(state: Arc<AppState>) -> Router {
    let cors = CorsLayer::new().allow_origin(Any).allow_methods(Any).allow_headers(Any);
    let mut app = Router::new()
        .route("/api/health", get(health))
        .route("/api/session", post(create_session))
        .route("/api/session/{id}", get(get_session))
        .route("/api/session/{id}/message", post(post_message))
        .with_state(state.clone())
        .layer(cors);
    if let Some(dir) = &state.config.static_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    app
}

pub async fn serve(addr: SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn health(State(state): State<Arc<AppState>>) -> Json<HealthResponse> {
    Json(HealthResponse {
        status: if state.model.is_some() { "ok" } else { "no_model" }.to_string(),
        checkpoint: state.model.as_ref().map(|m| m.name.clone()),
    })
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    body: Option<Json<CreateSessionRequest>>,
) -> ApiResult<CreateSessionResponse> {
    let loaded = state.model.as_ref().ok_or_else(ApiError::unavailable)?;
    let req = body.map(|Json(b)| b).unwrap_or_default();
    let persona = match req.persona {
        Some(p) if p.is_empty() || p.iter().any(|t| t.trim().is_empty()) => {
            return Err(ApiError::validation("persona traits must be non-empty"));
        }
        Some(p) => p,
        None => {
            let mut rng = state.rng.lock().expect("rng lock");
            loaded
                .persona_pool
                .choose(&mut *rng)
                .cloned()
                .ok_or_else(|| ApiError::internal("persona pool is empty"))?
        }
    };
    let traits = persona.iter().map(|t| PersonaTrait::new(t, &state.stop)).collect();
    let id = uuid::Uuid::new_v4().simple().to_string();
    let session = Session {
        id: id.clone(),
        persona: persona.clone(),
        traits,
        history: Vec::new(),
        created: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        debug: req.debug,
    };
    state
        .sessions
        .lock()
        .expect("session lock")
        .insert(id.clone(), Arc::new(tokio::sync::Mutex::new(session)));
    Ok(Json(CreateSessionResponse { id, persona }))
}

fn lookup(state: &AppState, id: &str) -> Result<Arc<tokio::sync::Mutex<Session>>, ApiError> {
    state
        .sessions
        .lock()
        .expect("session lock")
        .get(id)
        .cloned()
        .ok_or_else(|| ApiError::not_found(id))
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<SessionView> {
    let session = lookup(&state, &id)?;
    let s = session.lock().await;
    Ok(Json(SessionView {
        id: s.id.clone(),
        persona: s.persona.clone(),
        history: s.history.clone(),
        created: s.created,
    }))
}

/// Messages to one session are processed in arrival order because the
/// session lock is held across generation.
async fn post_message(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<MessageRequest>,
) -> ApiResult<MessageResponse> {
    let session = lookup(&state, &id)?;
    let loaded = state.model.clone().ok_or_else(ApiError::unavailable)?;
    let text = req.text.trim().to_string();
    if tokenize(&text).is_empty() {
        return Err(ApiError::validation("message text is empty"));
    }
    let mut s = session.lock().await;
    let mut turns: Vec<Vec<String>> = s.history.iter().map(|t| tokenize(&t.text)).collect();
    turns.push(tokenize(&text));
    let traits = s.traits.clone();
    let config = state.config.generation.clone();
    let generation = tokio::task::spawn_blocking(move || {
        let scorer = loaded.lm.as_ref().map(|lm| lm as &dyn CandidateScorer);
        generate_response(&loaded.model, scorer, &traits, &turns, &config)
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?
    .map_err(|e| ApiError::internal(e.to_string()))?;
    let reply = detokenize(&generation.response);
    s.history.push(Turn { speaker: Speaker::Human, text });
    s.history.push(Turn { speaker: Speaker::Model, text: reply.clone() });
    let debug = s.debug.then(|| {
        let rec = generation.debug;
        let order = rank_order(&rec.candidates);
        ReplyDebug {
            sketch: detokenize(&rec.beams[rec.beam].sketch),
            persona: rec.persona,
            persona_text: rec.persona.and_then(|i| s.persona.get(i).cloned()),
            candidates: order.iter().map(|&i| rec.candidates[i].clone()).collect(),
            record: rec,
        }
    });
    Ok(Json(MessageResponse { reply, debug }))
}
