//! Request and response bodies, and the error envelope.
//!
//! Every body is JSON. Success bodies are the structs below; every failure is
//! an [`ApiError`].

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use facegame_core::engine::{
    ActiveTarget, FrameDecision, FrameOutcome, GameEvent, SchedulerPolicy, SessionSnapshot, SessionState,
};
use facegame_core::{Emotion, EmotionCounts, EmotionMap, Error, GameMode, TemplateSet};
use serde::{Deserialize, Serialize};

/// `POST /api/sessions`
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSessionRequest {
    pub mode: GameMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub player_id: Option<String>,
    /// Fixes the target sequence; random when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheduler_policy: Option<SchedulerPolicy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetView {
    pub emotion: Emotion,
    /// Server clock, milliseconds.
    pub spawned_at_ms: u64,
    pub deadline_ms: u64,
    pub remaining_ms: u64,
}

impl TargetView {
    fn new(t: &ActiveTarget, now_ms: u64) -> Self {
        Self {
            emotion: t.emotion,
            spawned_at_ms: t.spawned_at_ms,
            deadline_ms: t.deadline_ms,
            remaining_ms: t.deadline_ms.saturating_sub(now_ms),
        }
    }
}

/// Returned by session creation and `GET /api/sessions/{id}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionView {
    pub session_id: String,
    pub mode: GameMode,
    pub player_id: Option<String>,
    pub initial_lives: u32,
    pub lives: u32,
    pub score: u64,
    pub state: SessionState,
    /// `null` once the session is over.
    pub target: Option<TargetView>,
    pub now_ms: u64,
}

impl From<&SessionSnapshot> for SessionView {
    fn from(s: &SessionSnapshot) -> Self {
        Self {
            session_id: s.session_id.clone(),
            mode: s.mode,
            player_id: s.player_id.clone(),
            initial_lives: s.initial_lives,
            lives: s.lives,
            score: s.score,
            state: s.state,
            target: s.target.as_ref().map(|t| TargetView::new(t, s.now_ms)),
            now_ms: s.now_ms,
        }
    }
}

/// `POST /api/sessions/{id}/frames`
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRequest {
    /// Base64 PNG or JPEG bytes.
    pub image: String,
    /// Client capture time in ms; echoed back, not used for timing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameResponse {
    /// The target this frame was judged against.
    pub target: Emotion,
    pub matched: bool,
    pub face_detected: bool,
    /// Classifier probabilities; absent when no face was found.
    pub scores: Option<EmotionMap<f64>>,
    /// Nearest template (customized mode only).
    pub matched_emotion: Option<Emotion>,
    /// Threshold applied (general mode only).
    pub threshold: Option<f64>,
    pub record_id: Option<String>,
    pub score: u64,
    pub lives: u32,
    pub state: SessionState,
    /// The replacement target when this frame consumed the previous one.
    pub next_target: Option<TargetView>,
    pub session: SessionView,
    pub events: Vec<GameEvent>,
    pub client_timestamp: Option<u64>,
}

impl FrameResponse {
    pub fn new(outcome: &FrameOutcome, client_timestamp: Option<u64>) -> Self {
        let session = SessionView::from(&outcome.snapshot);
        let (matched_emotion, threshold) = match &outcome.decision {
            FrameDecision::Verified { decision, .. } => (None, Some(decision.threshold_used)),
            FrameDecision::TemplateMatch { matched_emotion, .. } => (Some(*matched_emotion), None),
            FrameDecision::NoFace { .. } => (None, None),
        };
        Self {
            target: outcome.decision.target(),
            matched: outcome.scored,
            face_detected: !matches!(outcome.decision, FrameDecision::NoFace { .. }),
            scores: outcome.decision.scores().map(|s| EmotionMap(*s.values())),
            matched_emotion,
            threshold,
            record_id: outcome.saved_record.clone(),
            score: session.score,
            lives: session.lives,
            state: session.state,
            next_target: if outcome.scored { session.target.clone() } else { None },
            session,
            events: outcome.events.clone(),
            client_timestamp,
        }
    }
}

/// `POST /api/players/{id}/templates/{emotion}`
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateRequest {
    /// Base64 PNG or JPEG bytes.
    pub image: String,
}

/// Registration progress for one player.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateAck {
    pub player_id: String,
    /// The emotion just captured; `null` for the completion call.
    pub captured: Option<Emotion>,
    pub registered: Vec<Emotion>,
    pub missing: Vec<Emotion>,
    pub complete: bool,
}

impl TemplateAck {
    pub fn new(set: &TemplateSet, captured: Option<Emotion>) -> Self {
        Self {
            player_id: set.player_id.clone(),
            captured,
            registered: set.present(),
            missing: set.missing(),
            complete: set.is_complete(),
        }
    }
}

/// `GET /api/stats`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsResponse {
    pub counts: EmotionCounts,
    pub total: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    InvalidImage,
    NoFace,
    RateLimited,
    SessionOver,
    UnregisteredPlayer,
    IncompleteRegistration,
    BackendError,
}

impl ErrorCode {
    pub fn retryable(self) -> bool {
        matches!(self, ErrorCode::RateLimited | ErrorCode::NoFace)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    pub retryable: bool,
    #[serde(skip)]
    pub status: u16,
}

impl ApiError {
    pub fn new(status: StatusCode, code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            retryable: code.retryable(),
            status: status.as_u16(),
        }
    }

    pub fn invalid_image(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, ErrorCode::InvalidImage, message)
    }

    pub fn status(&self) -> StatusCode {
        StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        use ErrorCode::*;
        let (status, code) = match &e {
            Error::InvalidImage(_) | Error::InvalidArgument(_) => (StatusCode::BAD_REQUEST, InvalidImage),
            Error::NoFace { .. } => (StatusCode::UNPROCESSABLE_ENTITY, NoFace),
            Error::RateLimited { .. } => (StatusCode::TOO_MANY_REQUESTS, RateLimited),
            Error::SessionOver(_) => (StatusCode::CONFLICT, SessionOver),
            Error::UnknownSession(_) => (StatusCode::NOT_FOUND, SessionOver),
            Error::UnregisteredPlayer(_) => (StatusCode::NOT_FOUND, UnregisteredPlayer),
            Error::IncompleteRegistration { .. } => (StatusCode::CONFLICT, IncompleteRegistration),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, BackendError),
        };
        Self::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(self)).into_response()
    }
}
