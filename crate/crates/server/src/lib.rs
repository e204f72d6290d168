//! HTTP gateway in front of the game engine.
//!
//! | method | path                                   | body                     | success            |
//! |--------|----------------------------------------|--------------------------|--------------------|
//! | POST   | `/api/sessions`                        | [`CreateSessionRequest`] | [`SessionView`]    |
//! | GET    | `/api/sessions/{id}`                   |                          | [`SessionView`]    |
//! | POST   | `/api/sessions/{id}/frames`            | [`FrameRequest`]         | [`FrameResponse`]  |
//! | POST   | `/api/players/{id}/templates/{emotion}`| [`TemplateRequest`]      | [`TemplateAck`]    |
//! | POST   | `/api/players/{id}/templates/complete` | none                     | [`TemplateAck`]    |
//! | GET    | `/api/stats`                           |                          | [`StatsResponse`]  |
//!
//! Failures are an [`ApiError`] with one of these statuses:
//!
//! | code                      | status                           |
//! |---------------------------|----------------------------------|
//! | `invalid_image`           | 400, 413 for oversized payloads  |
//! | `no_face`                 | 422                              |
//! | `rate_limited`            | 429                              |
//! | `session_over`            | 409, 404 for unknown sessions    |
//! | `unregistered_player`     | 404                              |
//! | `incomplete_registration` | 409                              |
//! | `backend_error`           | 500                              |

pub mod api;
pub mod cli;

use std::future::Future;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, FromRequest, Path, Request, State};
use axum::http::{header, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use facegame_core::engine::StartRequest;
use facegame_core::{Emotion, Engine, FaceImage, GameMode};
use tokio::net::TcpListener;

pub use api::{
    ApiError, CreateSessionRequest, ErrorCode, FrameRequest, FrameResponse, SessionView, StatsResponse, TargetView,
    TemplateAck, TemplateRequest,
};

pub const DEFAULT_MAX_PAYLOAD: usize = 2 * 1024 * 1024;
pub const TICK_PERIOD: Duration = Duration::from_millis(250);

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<Engine>,
    /// Largest accepted decoded image, in bytes.
    pub max_payload: usize,
    pub static_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(engine: Arc<Engine>) -> Self {
        Self {
            engine,
            max_payload: DEFAULT_MAX_PAYLOAD,
            static_dir: None,
        }
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// `Json` whose rejections use the error envelope.
pub struct ApiJson<T>(pub T);

impl<S, T> FromRequest<S> for ApiJson<T>
where
    Json<T>: FromRequest<S, Rejection = JsonRejection>,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(ApiJson(v)),
            Err(rejection) => {
                let status = match rejection.status() {
                    StatusCode::PAYLOAD_TOO_LARGE => StatusCode::PAYLOAD_TOO_LARGE,
                    _ => StatusCode::BAD_REQUEST,
                };
                Err(ApiError::new(status, ErrorCode::InvalidImage, rejection.body_text()))
            }
        }
    }
}

pub fn router(state: AppState) -> Router {
    // Base64 inflates by 4/3; leave room for the rest of the JSON body.
    let body_limit = state.max_payload / 3 * 4 + 64 * 1024;
    let static_dir = state.static_dir.clone();
    let api = Router::new()
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/frames", post(submit_frame))
        .route("/api/players/{id}/templates/complete", post(complete_registration))
        .route("/api/players/{id}/templates/{emotion}", post(register_template))
        .route("/api/stats", get(stats))
        .layer(DefaultBodyLimit::max(body_limit))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback(move |uri: Uri| serve_static(dir.clone(), uri)),
        None => api,
    }
}

/// Files under `dir`; `/` and directories map to `index.html`.
async fn serve_static(dir: PathBuf, uri: Uri) -> Response {
    let mut path = dir;
    for part in uri.path().split('/').filter(|p| !p.is_empty()) {
        if part == ".." || part == "." || part.contains('\\') {
            return StatusCode::NOT_FOUND.into_response();
        }
        path.push(part);
    }
    if path.is_dir() {
        path.push("index.html");
    }
    match tokio::fs::read(&path).await {
        Ok(bytes) => {
            let mime = mime_guess::from_path(&path).first_or_octet_stream();
            ([(header::CONTENT_TYPE, mime.essence_str().to_string())], bytes).into_response()
        }
        Err(_) => StatusCode::NOT_FOUND.into_response(),
    }
}

/// Expires overdue targets even when no client is polling.
pub fn spawn_ticker(engine: Arc<Engine>, period: Duration) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let mut interval = tokio::time::interval(period);
        interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            interval.tick().await;
            let engine = Arc::clone(&engine);
            if tokio::task::spawn_blocking(move || engine.tick_all()).await.is_err() {
                tracing::error!("tick task panicked");
            }
        }
    })
}

pub async fn serve(listener: TcpListener, state: AppState, shutdown: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
    let ticker = spawn_ticker(Arc::clone(&state.engine), TICK_PERIOD);
    let result = axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await;
    ticker.abort();
    result
}

async fn blocking<T, E, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, E> + Send + 'static,
    T: Send + 'static,
    E: Send + 'static,
    ApiError: From<E>,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(ApiError::from),
        Err(e) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, ErrorCode::BackendError, e.to_string())),
    }
}

/// Decodes a base64 PNG/JPEG payload, accepting an optional data-URL prefix.
pub fn decode_image(payload: &str, max_payload: usize) -> Result<FaceImage, ApiError> {
    let data = match payload.split_once(";base64,") {
        Some((prefix, rest)) if prefix.starts_with("data:") => rest,
        _ => payload,
    };
    let too_large = || {
        ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            ErrorCode::InvalidImage,
            format!("image payload exceeds {max_payload} bytes"),
        )
    };
    if data.len() / 4 * 3 > max_payload + 3 {
        return Err(too_large());
    }
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(data.trim())
        .map_err(|e| ApiError::invalid_image(format!("image is not valid base64: {e}")))?;
    if bytes.len() > max_payload {
        return Err(too_large());
    }
    FaceImage::decode(&bytes).map_err(ApiError::from)
}

async fn create_session(State(state): State<AppState>, ApiJson(req): ApiJson<CreateSessionRequest>) -> ApiResult<SessionView> {
    let engine = Arc::clone(&state.engine);
    let snapshot = blocking(move || {
        engine.start_session(StartRequest {
            mode: Some(req.mode),
            player_id: req.player_id,
            seed: req.seed,
            scheduler_policy: req.scheduler_policy,
        })
    })
    .await?;
    tracing::info!(session = %snapshot.session_id, mode = %snapshot.mode, "session started");
    Ok(Json(SessionView::from(&snapshot)))
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<SessionView> {
    let engine = Arc::clone(&state.engine);
    let (snapshot, _) = blocking(move || engine.session_snapshot(&id)).await?;
    Ok(Json(SessionView::from(&snapshot)))
}

async fn submit_frame(
    State(state): State<AppState>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<FrameRequest>,
) -> ApiResult<FrameResponse> {
    let started = std::time::Instant::now();
    let engine = Arc::clone(&state.engine);
    let max = state.max_payload;
    let outcome = blocking(move || {
        let image = decode_image(&req.image, max)?;
        engine.submit_frame(&id, &image).map_err(ApiError::from)
    })
    .await?;
    tracing::debug!(elapsed_us = started.elapsed().as_micros() as u64, matched = outcome.scored, "frame");
    Ok(Json(FrameResponse::new(&outcome, req.timestamp)))
}

async fn register_template(
    State(state): State<AppState>,
    Path((player, emotion)): Path<(String, String)>,
    ApiJson(req): ApiJson<TemplateRequest>,
) -> ApiResult<TemplateAck> {
    let emotion: Emotion = emotion
        .parse()
        .map_err(|e: facegame_core::emotion::UnknownEmotion| ApiError::invalid_image(e.to_string()))?;
    let registry = Arc::clone(state.engine.registry());
    let max = state.max_payload;
    let set = blocking(move || {
        let image = decode_image(&req.image, max)?;
        registry.register_template(&player, emotion, &image)?;
        Ok::<_, ApiError>(registry.snapshot(&player)?.expect("registered above"))
    })
    .await?;
    Ok(Json(TemplateAck::new(&set, Some(emotion))))
}

async fn complete_registration(State(state): State<AppState>, Path(player): Path<String>) -> ApiResult<TemplateAck> {
    let registry = Arc::clone(state.engine.registry());
    let set = blocking(move || registry.complete_registration(&player)).await?;
    tracing::info!(player = %set.player_id, "registration complete");
    Ok(Json(TemplateAck::new(&set, None)))
}

async fn stats(State(state): State<AppState>) -> ApiResult<StatsResponse> {
    let counts = state.engine.store().counts();
    Ok(Json(StatsResponse {
        total: counts.total(),
        counts,
    }))
}

/// Body of a general-mode session request; handy for clients and tests.
pub fn general_session(seed: Option<u64>) -> CreateSessionRequest {
    CreateSessionRequest {
        mode: GameMode::General,
        player_id: None,
        seed,
        scheduler_policy: None,
    }
}
