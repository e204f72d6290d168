#![allow(dead_code)]

use std::sync::Arc;

use base64::Engine as _;
use facegame_core::engine::{Clock, ManualClock};
use facegame_core::{CollectionStore, EmotionClassifier, Engine, EngineConfig, FaceImage, ThresholdTable};
use facegame_server::{AppState, ApiError};
use serde::de::DeserializeOwned;
use tempfile::TempDir;
use tokio::sync::oneshot;

pub struct TestServer {
    pub base: String,
    pub state: AppState,
    pub dir: TempDir,
    pub client: reqwest::Client,
    stop: Option<oneshot::Sender<()>>,
}

impl Drop for TestServer {
    fn drop(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
    }
}

type SeedStore = Box<dyn FnOnce(&std::path::Path)>;

pub struct Options {
    pub config: EngineConfig,
    pub thresholds: ThresholdTable,
    pub clock: Option<Arc<dyn Clock>>,
    pub max_payload: usize,
    pub static_dir: Option<std::path::PathBuf>,
    /// Called with the store root before the store is opened.
    pub seed_store: Option<SeedStore>,
}

impl Default for Options {
    fn default() -> Self {
        Self {
            config: EngineConfig::default(),
            thresholds: ThresholdTable::default(),
            clock: None,
            max_payload: facegame_server::DEFAULT_MAX_PAYLOAD,
            static_dir: None,
            seed_store: None,
        }
    }
}

pub async fn start(classifier: Arc<dyn EmotionClassifier>, options: Options) -> TestServer {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    if let Some(seed) = options.seed_store {
        std::fs::create_dir_all(&root).unwrap();
        seed(&root);
    }
    let store = Arc::new(CollectionStore::open(&root).unwrap());
    let mut builder = Engine::builder(classifier, store)
        .config(options.config)
        .thresholds(options.thresholds);
    if let Some(clock) = options.clock {
        builder = builder.clock(clock);
    }
    let state = AppState {
        engine: Arc::new(builder.build()),
        max_payload: options.max_payload,
        static_dir: options.static_dir,
    };
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let (stop, stopped) = oneshot::channel();
    tokio::spawn(facegame_server::serve(listener, state.clone(), async {
        let _ = stopped.await;
    }));
    TestServer {
        base,
        state,
        dir,
        client: reqwest::Client::new(),
        stop: Some(stop),
    }
}

pub fn manual_clock() -> Arc<ManualClock> {
    Arc::new(ManualClock::new(0))
}

pub fn b64_png(image: &FaceImage) -> String {
    base64::engine::general_purpose::STANDARD.encode(image.encode_png().unwrap())
}

impl TestServer {
    pub fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    pub async fn post<T: DeserializeOwned>(&self, path: &str, body: &serde_json::Value) -> Result<T, (u16, ApiError)> {
        let resp = self.client.post(self.url(path)).json(body).send().await.unwrap();
        decode(resp).await
    }

    pub async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, (u16, ApiError)> {
        let resp = self.client.get(self.url(path)).send().await.unwrap();
        decode(resp).await
    }
}

/// Success bodies must parse as `T`, failures as `ApiError`; both reject
/// unknown fields.
pub async fn decode<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T, (u16, ApiError)> {
    let status = resp.status().as_u16();
    let bytes = resp.bytes().await.unwrap();
    if (200..300).contains(&status) {
        Ok(serde_json::from_slice(&bytes)
            .unwrap_or_else(|e| panic!("status {status} body does not match schema: {e}: {}", String::from_utf8_lossy(&bytes))))
    } else {
        let err: ApiError = serde_json::from_slice(&bytes)
            .unwrap_or_else(|e| panic!("status {status} body is not an ApiError: {e}: {}", String::from_utf8_lossy(&bytes)));
        assert_eq!(err.retryable, err.code.retryable());
        Err((status, err))
    }
}
