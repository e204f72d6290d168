use std::path::PathBuf;

use thiserror::Error;

use crate::emotion::Emotion;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scores: {0}")]
    InvalidScores(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid threshold: {0}")]
    InvalidThreshold(String),

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("backend load failed at byte {offset}: {reason}")]
    BackendLoad { offset: usize, reason: String },

    #[error("backend error: {0}")]
    Backend(String),

    /// No face found. `emotion` names the template being captured, if any.
    #[error("{}", no_face_message(.emotion))]
    NoFace { emotion: Option<Emotion> },

    #[error("incomplete registration, missing: {}", join_labels(.missing))]
    IncompleteRegistration { missing: Vec<Emotion> },

    #[error("player {0:?} has no complete template set")]
    UnregisteredPlayer(String),

    #[error("illegal state: {0}")]
    IllegalState(String),

    #[error("session {0} is over")]
    SessionOver(String),

    #[error("unknown session {0}")]
    UnknownSession(String),

    #[error("frame rate limited: {elapsed_ms} ms since last accepted frame, minimum {min_interval_ms} ms")]
    RateLimited { elapsed_ms: u64, min_interval_ms: u64 },

    #[error("manifest line {line}: {reason}")]
    ManifestParse { line: usize, reason: String },

    #[error("record {record_id} points at missing image {path}")]
    DanglingRecord { record_id: String, path: PathBuf },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("incomplete study: {0}")]
    IncompleteStudy(String),

    #[error("config line {line}: {reason}")]
    Config { line: usize, reason: String },

    #[error("template file {path}: {reason}")]
    TemplateFile { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn no_face_message(emotion: &Option<Emotion>) -> String {
    match emotion {
        Some(e) => format!("no face detected while capturing {e}, please recapture"),
        None => "no face detected".to_string(),
    }
}

fn join_labels(emotions: &[Emotion]) -> String {
    emotions
        .iter()
        .map(|e| e.label())
        .collect::<Vec<_>>()
        .join(", ")
}
