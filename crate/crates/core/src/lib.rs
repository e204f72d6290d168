//! Core of the facial-expression game: emotion verification, classifier
//! backends, per-player templates, the session engine, the collected dataset
//! and the evaluation harness.

pub mod backend;
pub mod config;
pub mod emotion;
pub mod engine;
pub mod error;
pub mod eval;
pub mod face;
pub mod rng;
pub mod store;
pub mod templates;
#[cfg(feature = "test-support")]
pub mod testing;

pub use backend::{load_backend, BackendDescriptor, EmotionClassifier, FeatureVector, ReferenceBackend, ReferenceWeights, WeightsSource};
pub use emotion::{normalize_scores, top_emotion, verify, Emotion, EmotionCounts, EmotionMap, EmotionScores, ThresholdTable, VerificationDecision};
pub use engine::{simulate_session, Engine, EngineConfig, GameMode, GameSession, SavePolicy, SchedulerPolicy};
pub use error::{Error, Result};
pub use eval::{aggregate_scores, cross_evaluate, evaluate, format_report, EvaluationReport, StudyRecord};
pub use face::{CenterCropDetector, FaceDetector, FaceImage, FaceRegion};
pub use store::{distribution, load_dataset, CollectionStore, DatasetManifest, DatasetRecord};
pub use templates::{TemplateRegistry, TemplateSet};
