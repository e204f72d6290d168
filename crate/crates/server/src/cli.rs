//! Command line and environment configuration for the server binary.
//!
//! Every flag can also be set through an environment variable with the
//! `FACEGAME_` prefix, e.g. `FACEGAME_BIND=0.0.0.0:8080`.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use clap::Parser;
use facegame_core::engine::MonotonicClock;
use facegame_core::face::CenterCropDetector;
use facegame_core::{
    CollectionStore, EmotionClassifier, Engine, EngineConfig, FaceDetector, ReferenceBackend, ReferenceWeights,
    TemplateRegistry,
};
use facegame_core::emotion::ThresholdTable;

use crate::{AppState, DEFAULT_MAX_PAYLOAD};

#[derive(Debug, Clone, Parser)]
#[command(name = "facegame-server", version, about = "Emotion game server and data collector")]
pub struct Args {
    /// Address to listen on.
    #[arg(long, env = "FACEGAME_BIND", default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,

    /// Engine config file (`key=value` lines).
    #[arg(long, env = "FACEGAME_CONFIG")]
    pub config: Option<PathBuf>,

    /// Collection store root; created if missing.
    #[arg(long, env = "FACEGAME_DATASET_ROOT", default_value = "data")]
    pub dataset_root: PathBuf,

    /// Reference backend weight file. Overrides `backend_path` from the config.
    #[arg(long, env = "FACEGAME_BACKEND")]
    pub backend: Option<PathBuf>,

    /// Threshold file (`label=value` lines). Overrides `thresholds_path`.
    #[arg(long, env = "FACEGAME_THRESHOLDS")]
    pub thresholds: Option<PathBuf>,

    /// Where completed template sets are kept. Defaults to `<dataset-root>/templates`.
    #[arg(long, env = "FACEGAME_TEMPLATES_DIR")]
    pub templates_dir: Option<PathBuf>,

    /// Static bundle served at `/` for the browser client.
    #[arg(long, env = "FACEGAME_STATIC_DIR")]
    pub static_dir: Option<PathBuf>,

    /// Largest accepted decoded image in bytes.
    #[arg(long, env = "FACEGAME_MAX_PAYLOAD", default_value_t = DEFAULT_MAX_PAYLOAD)]
    pub max_payload: usize,
}

/// Paths in a config file are relative to the file itself.
fn relative_to(base: Option<&Path>, path: PathBuf) -> PathBuf {
    match base {
        Some(dir) if path.is_relative() => dir.join(path),
        _ => path,
    }
}

pub fn build_state(args: &Args) -> anyhow::Result<AppState> {
    let mut config = match &args.config {
        Some(path) => EngineConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
        None => EngineConfig::default(),
    };
    let config_dir = args.config.as_deref().and_then(Path::parent);
    config.backend_path = args
        .backend
        .clone()
        .or_else(|| config.backend_path.take().map(|p| relative_to(config_dir, p)));
    config.thresholds_path = args
        .thresholds
        .clone()
        .or_else(|| config.thresholds_path.take().map(|p| relative_to(config_dir, p)));

    let backend = match &config.backend_path {
        Some(path) => ReferenceBackend::load_path(path).with_context(|| format!("loading backend {}", path.display()))?,
        None => {
            tracing::warn!("no backend configured, using untrained demo weights");
            ReferenceBackend::from_weights("demo", ReferenceWeights::seeded(32, 16, 0, 0.05))?
        }
    };
    let thresholds = match &config.thresholds_path {
        Some(path) => ThresholdTable::load(path).with_context(|| format!("loading thresholds {}", path.display()))?,
        None => ThresholdTable::default(),
    };

    let store = Arc::new(
        CollectionStore::open(&args.dataset_root)
            .with_context(|| format!("opening store {}", args.dataset_root.display()))?,
    );
    let classifier: Arc<dyn EmotionClassifier> = Arc::new(backend);
    let detector: Arc<dyn FaceDetector> = Arc::new(CenterCropDetector::default());
    let templates_dir = args
        .templates_dir
        .clone()
        .unwrap_or_else(|| args.dataset_root.join("templates"));
    let registry = Arc::new(TemplateRegistry::with_dir(
        Arc::clone(&classifier),
        Arc::clone(&detector),
        templates_dir,
    )?);
    let engine = Engine::builder(classifier, store)
        .config(config)
        .thresholds(thresholds)
        .detector(detector)
        .registry(registry)
        .clock(Arc::new(MonotonicClock::default()))
        .build();
    Ok(AppState {
        engine: Arc::new(engine),
        max_payload: args.max_payload,
        static_dir: args.static_dir.clone(),
    })
}
