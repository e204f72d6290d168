//! Game sessions: target scheduling, frame adjudication, lives and score.
//!
//! [`GameSession`] is the pure state machine. [`Engine`] wires sessions to a
//! classifier, the template registry and the collection store, and owns the
//! clock. Times are milliseconds on the engine clock.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Instant;

use chrono::Utc;
use serde::{Deserialize, Serialize};

use crate::backend::EmotionClassifier;
use crate::config;
use crate::emotion::{verify, Emotion, EmotionCounts, EmotionScores, ThresholdTable, VerificationDecision, NUM_EMOTIONS};
use crate::error::{Error, Result};
use crate::face::{detect_and_crop, CenterCropDetector, FaceDetector, FaceImage};
use crate::rng::SplitMix64;
use crate::store::{CollectionStore, SampleMetadata};
use crate::templates::{validate_player_id, TemplateRegistry};

pub const DEFAULT_INITIAL_LIVES: u32 = 5;
pub const DEFAULT_BOMB_TTL_MS: u64 = 10_000;
pub const DEFAULT_MIN_FRAME_INTERVAL_MS: u64 = 500;

/// Mixed into the seed for the simulated player's own generator.
const PLAYER_STREAM: u64 = 0xD1B5_4A32_D192_ED03;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GameMode {
    /// Shared classifier plus per-emotion thresholds.
    General,
    /// Nearest match against the player's own templates.
    Customized,
}

impl GameMode {
    pub fn label(self) -> &'static str {
        match self {
            GameMode::General => "general",
            GameMode::Customized => "customized",
        }
    }
}

impl fmt::Display for GameMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for GameMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "general" => Ok(GameMode::General),
            "customized" => Ok(GameMode::Customized),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerPolicy {
    /// Each emotion with probability 1/7.
    #[default]
    Uniform,
    /// Weight `1 + max_count - count_e` over the current dataset counts.
    BalanceAware,
}

impl SchedulerPolicy {
    pub fn label(self) -> &'static str {
        match self {
            SchedulerPolicy::Uniform => "uniform",
            SchedulerPolicy::BalanceAware => "balance_aware",
        }
    }

    /// Draws the next target.
    pub fn draw(self, rng: &mut SplitMix64, counts: &EmotionCounts) -> Emotion {
        match self {
            SchedulerPolicy::Uniform => Emotion::ALL[rng.below(NUM_EMOTIONS as u64) as usize],
            SchedulerPolicy::BalanceAware => {
                let weights = balance_weights(counts);
                let mut r = rng.below(weights.iter().sum());
                for (i, w) in weights.iter().enumerate() {
                    if r < *w {
                        return Emotion::ALL[i];
                    }
                    r -= w;
                }
                unreachable!("draw below total weight")
            }
        }
    }
}

pub fn balance_weights(counts: &EmotionCounts) -> [u64; NUM_EMOTIONS] {
    let max = counts.0.iter().copied().max().unwrap_or(0);
    counts.0.map(|c| 1 + max - c)
}

impl FromStr for SchedulerPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "uniform" => Ok(SchedulerPolicy::Uniform),
            "balance_aware" => Ok(SchedulerPolicy::BalanceAware),
            other => Err(format!("unknown scheduler policy {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SavePolicy {
    #[default]
    SaveOnMatch,
    /// Every frame with a face is saved under the active target; unmatched
    /// frames are flagged unverified.
    SaveAll,
}

impl SavePolicy {
    pub fn label(self) -> &'static str {
        match self {
            SavePolicy::SaveOnMatch => "save_on_match",
            SavePolicy::SaveAll => "save_all",
        }
    }
}

impl FromStr for SavePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "save_on_match" => Ok(SavePolicy::SaveOnMatch),
            "save_all" => Ok(SavePolicy::SaveAll),
            other => Err(format!("unknown save policy {other:?}")),
        }
    }
}

/// Engine settings, loadable from a `key=value` file.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub initial_lives: u32,
    pub bomb_ttl_ms: u64,
    pub min_frame_interval_ms: u64,
    pub scheduler_policy: SchedulerPolicy,
    pub save_policy: SavePolicy,
    pub thresholds_path: Option<PathBuf>,
    pub backend_path: Option<PathBuf>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            initial_lives: DEFAULT_INITIAL_LIVES,
            bomb_ttl_ms: DEFAULT_BOMB_TTL_MS,
            min_frame_interval_ms: DEFAULT_MIN_FRAME_INTERVAL_MS,
            scheduler_policy: SchedulerPolicy::Uniform,
            save_policy: SavePolicy::SaveOnMatch,
            thresholds_path: None,
            backend_path: None,
        }
    }
}

impl EngineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for entry in config::parse_key_values(text)? {
            let bad = |reason: String| Error::Config {
                line: entry.line,
                reason,
            };
            let v = entry.value.as_str();
            let int = |v: &str| v.parse::<u64>().map_err(|_| bad(format!("{:?} is not a non-negative integer", v)));
            match entry.key.as_str() {
                "initial_lives" => {
                    let lives = int(v)?;
                    if lives == 0 || lives > u32::MAX as u64 {
                        return Err(bad(format!("initial_lives {lives} out of range")));
                    }
                    cfg.initial_lives = lives as u32;
                }
                "bomb_ttl_ms" => {
                    cfg.bomb_ttl_ms = int(v)?;
                    if cfg.bomb_ttl_ms == 0 {
                        return Err(bad("bomb_ttl_ms must be positive".into()));
                    }
                }
                "min_frame_interval_ms" => cfg.min_frame_interval_ms = int(v)?,
                "scheduler_policy" => cfg.scheduler_policy = v.parse().map_err(bad)?,
                "save_policy" => cfg.save_policy = v.parse().map_err(bad)?,
                "thresholds_path" => cfg.thresholds_path = Some(PathBuf::from(v)),
                "backend_path" => cfg.backend_path = Some(PathBuf::from(v)),
                other => return Err(bad(format!("unknown key {other:?}"))),
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionConfig {
    pub mode: GameMode,
    pub player_id: Option<String>,
    pub scheduler_policy: SchedulerPolicy,
    pub seed: u64,
    pub initial_lives: u32,
    pub bomb_ttl_ms: u64,
    pub min_frame_interval_ms: u64,
}

impl SessionConfig {
    pub fn general(seed: u64) -> Self {
        Self {
            mode: GameMode::General,
            player_id: None,
            scheduler_policy: SchedulerPolicy::Uniform,
            seed,
            initial_lives: DEFAULT_INITIAL_LIVES,
            bomb_ttl_ms: DEFAULT_BOMB_TTL_MS,
            min_frame_interval_ms: DEFAULT_MIN_FRAME_INTERVAL_MS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveTarget {
    pub emotion: Emotion,
    pub spawned_at_ms: u64,
    pub deadline_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionState {
    Running,
    Over,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GameEvent {
    TargetSpawned { emotion: Emotion, deadline_ms: u64 },
    LifeLost { target: Emotion, lives_left: u32 },
    GameOver { final_score: u64 },
}

#[derive(Debug, Clone)]
pub struct GameSession {
    id: String,
    config: SessionConfig,
    rng: SplitMix64,
    lives: u32,
    score: u64,
    state: SessionState,
    active: Option<ActiveTarget>,
    last_frame_ms: Option<u64>,
    targets: Vec<Emotion>,
}

impl GameSession {
    /// A running session with its first target spawned at `now_ms`.
    pub fn start(id: impl Into<String>, config: SessionConfig, now_ms: u64, counts: &EmotionCounts) -> Result<Self> {
        if config.initial_lives == 0 {
            return Err(Error::InvalidArgument("initial_lives must be positive".into()));
        }
        if config.bomb_ttl_ms == 0 {
            return Err(Error::InvalidArgument("bomb_ttl_ms must be positive".into()));
        }
        let mut session = Self {
            id: id.into(),
            rng: SplitMix64::new(config.seed),
            lives: config.initial_lives,
            score: 0,
            state: SessionState::Running,
            active: None,
            last_frame_ms: None,
            targets: Vec::new(),
            config,
        };
        session.spawn_target(now_ms, counts)?;
        Ok(session)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn mode(&self) -> GameMode {
        self.config.mode
    }

    pub fn player_id(&self) -> Option<&str> {
        self.config.player_id.as_deref()
    }

    pub fn lives(&self) -> u32 {
        self.lives
    }

    pub fn score(&self) -> u64 {
        self.score
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn is_over(&self) -> bool {
        self.state == SessionState::Over
    }

    pub fn active_target(&self) -> Option<&ActiveTarget> {
        self.active.as_ref()
    }

    /// Every target spawned so far, in order.
    pub fn target_history(&self) -> &[Emotion] {
        &self.targets
    }

    pub fn spawn_target(&mut self, now_ms: u64, counts: &EmotionCounts) -> Result<Emotion> {
        if self.is_over() {
            return Err(Error::IllegalState(format!("session {} is over", self.id)));
        }
        if self.active.is_some() {
            return Err(Error::IllegalState(format!("session {} already has an active target", self.id)));
        }
        let emotion = self.config.scheduler_policy.draw(&mut self.rng, counts);
        self.active = Some(ActiveTarget {
            emotion,
            spawned_at_ms: now_ms,
            deadline_ms: now_ms.saturating_add(self.config.bomb_ttl_ms),
        });
        self.targets.push(emotion);
        Ok(emotion)
    }

    /// Rate-limits frames; an accepted frame resets the window.
    pub fn admit_frame(&mut self, now_ms: u64) -> Result<()> {
        if self.is_over() {
            return Err(Error::SessionOver(self.id.clone()));
        }
        if let Some(last) = self.last_frame_ms {
            let elapsed_ms = now_ms.saturating_sub(last);
            if elapsed_ms < self.config.min_frame_interval_ms {
                return Err(Error::RateLimited {
                    elapsed_ms,
                    min_interval_ms: self.config.min_frame_interval_ms,
                });
            }
        }
        self.last_frame_ms = Some(now_ms);
        Ok(())
    }

    /// Applies an adjudicated frame. A match scores a point, consumes the
    /// active target and spawns the next one immediately.
    pub fn resolve(&mut self, matched: bool, now_ms: u64, counts: &EmotionCounts) -> Result<Vec<GameEvent>> {
        if self.is_over() {
            return Err(Error::SessionOver(self.id.clone()));
        }
        if !matched {
            return Ok(Vec::new());
        }
        self.score += 1;
        self.active = None;
        let emotion = self.spawn_target(now_ms, counts)?;
        Ok(vec![GameEvent::TargetSpawned {
            emotion,
            deadline_ms: self.active.expect("just spawned").deadline_ms,
        }])
    }

    /// Expires every target whose deadline is at or before `now_ms`. A
    /// replacement spawns at the deadline it replaces, so a late call catches
    /// up on all misses in between.
    pub fn tick(&mut self, now_ms: u64, counts: &EmotionCounts) -> Vec<GameEvent> {
        let mut events = Vec::new();
        while let Some(active) = self.active.filter(|a| !self.is_over() && now_ms >= a.deadline_ms) {
            self.active = None;
            self.lives -= 1;
            events.push(GameEvent::LifeLost {
                target: active.emotion,
                lives_left: self.lives,
            });
            if self.lives == 0 {
                self.state = SessionState::Over;
                events.push(GameEvent::GameOver { final_score: self.score });
            } else {
                let emotion = self.spawn_target(active.deadline_ms, counts).expect("running without target");
                events.push(GameEvent::TargetSpawned {
                    emotion,
                    deadline_ms: self.active.expect("just spawned").deadline_ms,
                });
            }
        }
        events
    }

    pub fn snapshot(&self, now_ms: u64) -> SessionSnapshot {
        SessionSnapshot {
            session_id: self.id.clone(),
            mode: self.config.mode,
            player_id: self.config.player_id.clone(),
            initial_lives: self.config.initial_lives,
            lives: self.lives,
            score: self.score,
            state: self.state,
            target: self.active,
            now_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub session_id: String,
    pub mode: GameMode,
    pub player_id: Option<String>,
    pub initial_lives: u32,
    pub lives: u32,
    pub score: u64,
    pub state: SessionState,
    pub target: Option<ActiveTarget>,
    pub now_ms: u64,
}

/// How a frame was judged against the active target.
#[derive(Debug, Clone, PartialEq)]
pub enum FrameDecision {
    /// General mode.
    Verified {
        decision: VerificationDecision,
        scores: EmotionScores,
    },
    /// Customized mode. `scores` come from the shared classifier and are
    /// informational only.
    TemplateMatch {
        target: Emotion,
        matched_emotion: Emotion,
        scores: EmotionScores,
    },
    /// No face detected; counts as a miss.
    NoFace { target: Emotion },
}

impl FrameDecision {
    pub fn matched(&self) -> bool {
        match self {
            FrameDecision::Verified { decision, .. } => decision.matched,
            FrameDecision::TemplateMatch {
                target,
                matched_emotion,
                ..
            } => target == matched_emotion,
            FrameDecision::NoFace { .. } => false,
        }
    }

    pub fn target(&self) -> Emotion {
        match self {
            FrameDecision::Verified { decision, .. } => decision.target,
            FrameDecision::TemplateMatch { target, .. } | FrameDecision::NoFace { target } => *target,
        }
    }

    pub fn scores(&self) -> Option<&EmotionScores> {
        match self {
            FrameDecision::Verified { scores, .. } | FrameDecision::TemplateMatch { scores, .. } => Some(scores),
            FrameDecision::NoFace { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutcome {
    pub decision: FrameDecision,
    pub scored: bool,
    pub saved_record: Option<String>,
    pub snapshot: SessionSnapshot,
    /// Events from the pre-frame tick and from the frame itself.
    pub events: Vec<GameEvent>,
}

pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

/// Milliseconds since construction.
#[derive(Debug)]
pub struct MonotonicClock {
    start: Instant,
}

impl Default for MonotonicClock {
    fn default() -> Self {
        Self { start: Instant::now() }
    }
}

impl Clock for MonotonicClock {
    fn now_ms(&self) -> u64 {
        self.start.elapsed().as_millis() as u64
    }
}

/// A clock that only moves when told to.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(start_ms: u64) -> Self {
        Self(AtomicU64::new(start_ms))
    }

    pub fn set(&self, ms: u64) {
        self.0.store(ms, Ordering::SeqCst);
    }

    pub fn advance(&self, ms: u64) {
        self.0.fetch_add(ms, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StartRequest {
    pub mode: Option<GameMode>,
    pub player_id: Option<String>,
    pub seed: Option<u64>,
    pub scheduler_policy: Option<SchedulerPolicy>,
}

pub struct EngineBuilder {
    config: EngineConfig,
    thresholds: ThresholdTable,
    classifier: Arc<dyn EmotionClassifier>,
    store: Arc<CollectionStore>,
    detector: Option<Arc<dyn FaceDetector>>,
    registry: Option<Arc<TemplateRegistry>>,
    clock: Option<Arc<dyn Clock>>,
}

impl EngineBuilder {
    pub fn config(mut self, config: EngineConfig) -> Self {
        self.config = config;
        self
    }

    pub fn thresholds(mut self, thresholds: ThresholdTable) -> Self {
        self.thresholds = thresholds;
        self
    }

    pub fn detector(mut self, detector: Arc<dyn FaceDetector>) -> Self {
        self.detector = Some(detector);
        self
    }

    /// Defaults to an in-memory registry over the engine's classifier and detector.
    pub fn registry(mut self, registry: Arc<TemplateRegistry>) -> Self {
        self.registry = Some(registry);
        self
    }

    pub fn clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = Some(clock);
        self
    }

    pub fn build(self) -> Engine {
        let detector = self
            .detector
            .unwrap_or_else(|| Arc::new(CenterCropDetector::default()));
        let registry = self.registry.unwrap_or_else(|| {
            Arc::new(TemplateRegistry::new(Arc::clone(&self.classifier), Arc::clone(&detector)))
        });
        Engine {
            config: self.config,
            thresholds: self.thresholds,
            classifier: self.classifier,
            detector,
            registry,
            store: self.store,
            clock: self.clock.unwrap_or_else(|| Arc::new(MonotonicClock::default())),
            sessions: RwLock::new(HashMap::new()),
        }
    }
}

/// Hosts sessions. Calls for one session serialize on that session's lock;
/// different sessions run in parallel.
pub struct Engine {
    config: EngineConfig,
    thresholds: ThresholdTable,
    classifier: Arc<dyn EmotionClassifier>,
    detector: Arc<dyn FaceDetector>,
    registry: Arc<TemplateRegistry>,
    store: Arc<CollectionStore>,
    clock: Arc<dyn Clock>,
    sessions: RwLock<HashMap<String, Arc<Mutex<GameSession>>>>,
}

impl Engine {
    pub fn builder(classifier: Arc<dyn EmotionClassifier>, store: Arc<CollectionStore>) -> EngineBuilder {
        EngineBuilder {
            config: EngineConfig::default(),
            thresholds: ThresholdTable::default(),
            classifier,
            store,
            detector: None,
            registry: None,
            clock: None,
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn thresholds(&self) -> &ThresholdTable {
        &self.thresholds
    }

    pub fn registry(&self) -> &Arc<TemplateRegistry> {
        &self.registry
    }

    pub fn store(&self) -> &Arc<CollectionStore> {
        &self.store
    }

    pub fn classifier(&self) -> &Arc<dyn EmotionClassifier> {
        &self.classifier
    }

    pub fn now_ms(&self) -> u64 {
        self.clock.now_ms()
    }

    pub fn start_session(&self, request: StartRequest) -> Result<SessionSnapshot> {
        let mode = request.mode.unwrap_or(GameMode::General);
        if let Some(p) = &request.player_id {
            validate_player_id(p)?;
        }
        if mode == GameMode::Customized {
            match &request.player_id {
                Some(p) if self.registry.is_registered(p) => {}
                Some(p) => return Err(Error::UnregisteredPlayer(p.clone())),
                None => return Err(Error::UnregisteredPlayer(String::new())),
            }
        }
        let id = uuid::Uuid::new_v4().simple().to_string();
        let seed = request.seed.unwrap_or_else(|| {
            let bytes = uuid::Uuid::new_v4().into_bytes();
            u64::from_le_bytes(bytes[..8].try_into().unwrap())
        });
        let config = SessionConfig {
            mode,
            player_id: request.player_id,
            scheduler_policy: request.scheduler_policy.unwrap_or(self.config.scheduler_policy),
            seed,
            initial_lives: self.config.initial_lives,
            bomb_ttl_ms: self.config.bomb_ttl_ms,
            min_frame_interval_ms: self.config.min_frame_interval_ms,
        };
        let now = self.clock.now_ms();
        let session = GameSession::start(id.clone(), config, now, &self.store.counts())?;
        let snapshot = session.snapshot(now);
        self.sessions
            .write()
            .unwrap()
            .insert(id, Arc::new(Mutex::new(session)));
        Ok(snapshot)
    }

    fn session(&self, session_id: &str) -> Result<Arc<Mutex<GameSession>>> {
        self.sessions
            .read()
            .unwrap()
            .get(session_id)
            .cloned()
            .ok_or_else(|| Error::UnknownSession(session_id.to_string()))
    }

    /// Current state after expiring any overdue target.
    pub fn session_snapshot(&self, session_id: &str) -> Result<(SessionSnapshot, Vec<GameEvent>)> {
        let session = self.session(session_id)?;
        let mut s = session.lock().unwrap();
        let now = self.clock.now_ms();
        let events = s.tick(now, &self.store.counts());
        Ok((s.snapshot(now), events))
    }

    /// Ticks every running session.
    pub fn tick_all(&self) -> usize {
        let sessions: Vec<_> = self.sessions.read().unwrap().values().cloned().collect();
        let now = self.clock.now_ms();
        let counts = self.store.counts();
        let mut expired = 0;
        for s in sessions {
            let mut s = s.lock().unwrap();
            if !s.tick(now, &counts).is_empty() {
                expired += 1;
            }
        }
        expired
    }

    pub fn submit_frame(&self, session_id: &str, image: &FaceImage) -> Result<FrameOutcome> {
        let session = self.session(session_id)?;
        let mut s = session.lock().unwrap();
        let now = self.clock.now_ms();
        let mut events = s.tick(now, &self.store.counts());
        s.admit_frame(now)?;
        let target = s.active_target().expect("running session has a target").emotion;

        let face = detect_and_crop(self.detector.as_ref(), image);
        let decision = match &face {
            None => FrameDecision::NoFace { target },
            Some(face) => {
                let scores = self.classifier.classify(face)?;
                match s.mode() {
                    GameMode::General => FrameDecision::Verified {
                        decision: verify(target, &scores, &self.thresholds),
                        scores,
                    },
                    GameMode::Customized => {
                        let player = s.player_id().unwrap_or_default().to_string();
                        FrameDecision::TemplateMatch {
                            target,
                            matched_emotion: self.registry.match_face(&player, face)?,
                            scores,
                        }
                    }
                }
            }
        };
        let matched = decision.matched();

        let should_save = match self.config.save_policy {
            SavePolicy::SaveOnMatch => matched,
            SavePolicy::SaveAll => face.is_some(),
        };
        let saved_record = match face.filter(|_| should_save) {
            Some(face) => Some(self.store.save_sample(
                &face,
                target,
                SampleMetadata {
                    session_id: s.id().to_string(),
                    player_id: s.player_id().map(str::to_string),
                    mode: s.mode(),
                    verified: matched,
                    target_score: decision.scores().map_or(0.0, |sc| sc.get(target)),
                    timestamp: Utc::now(),
                },
            )?),
            None => None,
        };

        events.extend(s.resolve(matched, now, &self.store.counts())?);
        Ok(FrameOutcome {
            decision,
            scored: matched,
            saved_record,
            snapshot: s.snapshot(now),
            events,
        })
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().unwrap().len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimulationConfig {
    pub initial_lives: u32,
    pub bomb_ttl_ms: u64,
    pub scheduler_policy: SchedulerPolicy,
    pub save_policy: SavePolicy,
    /// Stop after this many targets have been adjudicated.
    pub max_rounds: u64,
    /// Dataset counts seen by the balance-aware scheduler before the session.
    pub initial_counts: EmotionCounts,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            initial_lives: DEFAULT_INITIAL_LIVES,
            bomb_ttl_ms: DEFAULT_BOMB_TTL_MS,
            scheduler_policy: SchedulerPolicy::Uniform,
            save_policy: SavePolicy::SaveOnMatch,
            max_rounds: 10_000,
            initial_counts: EmotionCounts::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimulationReport {
    pub final_score: u64,
    pub lives: u32,
    pub rounds: u64,
    pub life_losses: u32,
    pub saves: EmotionCounts,
    pub targets: Vec<Emotion>,
}

/// One adjudicated target in a simulated session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimulationStep {
    pub round: u64,
    pub target: Emotion,
    pub matched: bool,
    pub lives: u32,
    pub score: u64,
    pub events: Vec<GameEvent>,
    pub saved: Option<Emotion>,
}

/// Plays a headless session: one frame per target, matching the target with
/// probability `match_probability[target]`.
pub fn simulate_session(match_probability: &[f64; NUM_EMOTIONS], seed: u64, config: &SimulationConfig) -> Result<SimulationReport> {
    simulate_session_with(match_probability, seed, config, |_| {})
}

pub fn simulate_session_with(
    match_probability: &[f64; NUM_EMOTIONS],
    seed: u64,
    config: &SimulationConfig,
    mut observe: impl FnMut(&SimulationStep),
) -> Result<SimulationReport> {
    if let Some(p) = match_probability.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidArgument(format!("match probability {p} outside [0, 1]")));
    }
    let session_config = SessionConfig {
        mode: GameMode::General,
        player_id: None,
        scheduler_policy: config.scheduler_policy,
        seed,
        initial_lives: config.initial_lives,
        bomb_ttl_ms: config.bomb_ttl_ms,
        min_frame_interval_ms: 0,
    };
    let mut counts = config.initial_counts;
    let mut player = SplitMix64::new(seed ^ PLAYER_STREAM);
    let mut session = GameSession::start(format!("sim-{seed}"), session_config, 0, &counts)?;
    let mut saves = EmotionCounts::default();
    let mut life_losses = 0;
    let mut rounds = 0;

    while !session.is_over() && rounds < config.max_rounds {
        let active = *session.active_target().expect("running");
        let frame_at = active.spawned_at_ms + config.bomb_ttl_ms / 2;
        session.admit_frame(frame_at)?;
        let matched = player.next_f64() < match_probability[active.emotion.index()];
        let saved = match config.save_policy {
            SavePolicy::SaveOnMatch => matched,
            SavePolicy::SaveAll => true,
        }
        .then_some(active.emotion);
        if let Some(e) = saved {
            saves.increment(e);
            counts.increment(e);
        }
        let events = if matched {
            session.resolve(true, frame_at, &counts)?
        } else {
            session.tick(active.deadline_ms, &counts)
        };
        life_losses += events
            .iter()
            .filter(|e| matches!(e, GameEvent::LifeLost { .. }))
            .count() as u32;
        rounds += 1;
        observe(&SimulationStep {
            round: rounds,
            target: active.emotion,
            matched,
            lives: session.lives(),
            score: session.score(),
            events,
            saved,
        });
    }

    Ok(SimulationReport {
        final_score: session.score(),
        lives: session.lives(),
        rounds,
        life_losses,
        saves,
        targets: session.target_history().to_vec(),
    })
}
