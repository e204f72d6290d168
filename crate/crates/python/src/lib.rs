//! Python module `facegame`.
//!
//! Images cross the boundary as PNG or JPEG bytes, emotions as lowercase
//! labels, probability vectors as 7-element lists in canonical order.

use std::path::PathBuf;
use std::sync::Arc;

use facegame_core::engine::{FrameDecision, FrameOutcome, SessionSnapshot, SimulationConfig, StartRequest};
use facegame_core::{
    CollectionStore, Emotion, EmotionClassifier, EmotionCounts, EmotionScores, EngineConfig, FaceImage, GameMode,
    SchedulerPolicy, ThresholdTable,
};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(facegame, FacegameError, PyException, "Raised for any error from the core library.");

fn err(e: facegame_core::Error) -> PyErr {
    FacegameError::new_err(e.to_string())
}

fn emotion(label: &str) -> PyResult<Emotion> {
    label.parse().map_err(|e: facegame_core::emotion::UnknownEmotion| PyValueError::new_err(e.to_string()))
}

fn seven(values: Vec<f64>, what: &str) -> PyResult<[f64; 7]> {
    values
        .try_into()
        .map_err(|v: Vec<f64>| PyValueError::new_err(format!("{what} needs 7 values, got {}", v.len())))
}

fn image(bytes: &[u8]) -> PyResult<FaceImage> {
    FaceImage::decode(bytes).map_err(err)
}

fn counts_dict<'py>(py: Python<'py>, counts: &EmotionCounts) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    for e in Emotion::ALL {
        d.set_item(e.label(), counts.get(e))?;
    }
    Ok(d)
}

/// Seven labels in canonical order.
#[pyfunction]
fn emotions() -> Vec<&'static str> {
    Emotion::ALL.iter().map(|e| e.label()).collect()
}

#[pyfunction]
fn normalize_scores(raw: Vec<f64>) -> PyResult<Vec<f64>> {
    Ok(facegame_core::normalize_scores(&seven(raw, "scores")?).map_err(err)?.values().to_vec())
}

#[pyfunction]
fn top_emotion(scores: Vec<f64>) -> PyResult<&'static str> {
    let scores = EmotionScores::new(seven(scores, "scores")?).map_err(err)?;
    Ok(facegame_core::top_emotion(&scores).label())
}

/// Returns `(matched, target_score, threshold_used)`.
#[pyfunction]
#[pyo3(signature = (target, scores, thresholds=None))]
fn verify(target: &str, scores: Vec<f64>, thresholds: Option<Vec<f64>>) -> PyResult<(bool, f64, f64)> {
    let scores = EmotionScores::new(seven(scores, "scores")?).map_err(err)?;
    let table = match thresholds {
        Some(t) => ThresholdTable::new(seven(t, "thresholds")?).map_err(err)?,
        None => ThresholdTable::default(),
    };
    let d = facegame_core::verify(emotion(target)?, &scores, &table);
    Ok((d.matched, d.target_score, d.threshold_used))
}

/// The reference affine backend.
#[pyclass(frozen)]
struct ReferenceBackend(Arc<facegame_core::ReferenceBackend>);

#[pymethods]
impl ReferenceBackend {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self(Arc::new(facegame_core::ReferenceBackend::load_path(&path).map_err(err)?)))
    }

    #[staticmethod]
    #[pyo3(signature = (input_side=32, feature_dimension=16, seed=0, scale=0.05, name="seeded"))]
    fn seeded(input_side: u32, feature_dimension: u32, seed: u64, scale: f32, name: &str) -> PyResult<Self> {
        let w = facegame_core::ReferenceWeights::seeded(input_side, feature_dimension, seed, scale);
        Ok(Self(Arc::new(facegame_core::ReferenceBackend::from_weights(name, w).map_err(err)?)))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.weights().save(&path).map_err(err)
    }

    #[getter]
    fn name(&self) -> String {
        self.0.descriptor().name.clone()
    }

    #[getter]
    fn feature_dimension(&self) -> usize {
        self.0.feature_dimension()
    }

    fn classify(&self, image_bytes: &[u8]) -> PyResult<Vec<f64>> {
        Ok(self.0.classify(&image(image_bytes)?).map_err(err)?.values().to_vec())
    }

    fn embed(&self, image_bytes: &[u8]) -> PyResult<Vec<f32>> {
        Ok(self.0.embed(&image(image_bytes)?).map_err(err)?.components().to_vec())
    }
}

/// Per-emotion counts of a dataset root.
#[pyfunction]
fn distribution<'py>(py: Python<'py>, root: PathBuf) -> PyResult<Bound<'py, PyDict>> {
    let dataset = facegame_core::load_dataset(root).map_err(err)?;
    counts_dict(py, &facegame_core::distribution(dataset.manifest()).counts)
}

/// Markdown table for JSON evaluation reports.
#[pyfunction]
fn format_report(paths: Vec<PathBuf>) -> PyResult<String> {
    let reports = paths
        .iter()
        .map(|p| facegame_core::EvaluationReport::load(p))
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    Ok(facegame_core::format_report(&reports))
}

/// Headless session with a player who matches each target with
/// probability `p[target]`.
#[pyfunction]
#[pyo3(signature = (p, seed, initial_lives=5, max_rounds=10_000, policy="uniform"))]
fn simulate_session<'py>(
    py: Python<'py>,
    p: Vec<f64>,
    seed: u64,
    initial_lives: u32,
    max_rounds: u64,
    policy: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let scheduler_policy = policy.parse::<SchedulerPolicy>().map_err(|e| PyValueError::new_err(e.to_string()))?;
    let config = SimulationConfig {
        initial_lives,
        max_rounds,
        scheduler_policy,
        ..Default::default()
    };
    let r = facegame_core::simulate_session(&seven(p, "p")?, seed, &config).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("final_score", r.final_score)?;
    d.set_item("lives", r.lives)?;
    d.set_item("rounds", r.rounds)?;
    d.set_item("life_losses", r.life_losses)?;
    d.set_item("saves", counts_dict(py, &r.saves)?)?;
    d.set_item("targets", r.targets.iter().map(|e| e.label()).collect::<Vec<_>>())?;
    Ok(d)
}

fn snapshot_dict<'py>(py: Python<'py>, s: &SessionSnapshot) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("session_id", &s.session_id)?;
    d.set_item("mode", s.mode.label())?;
    d.set_item("player_id", s.player_id.as_deref())?;
    d.set_item("lives", s.lives)?;
    d.set_item("score", s.score)?;
    d.set_item("over", s.state == facegame_core::engine::SessionState::Over)?;
    d.set_item("target", s.target.map(|t| t.emotion.label()))?;
    d.set_item("deadline_ms", s.target.map(|t| t.deadline_ms))?;
    d.set_item("now_ms", s.now_ms)?;
    Ok(d)
}

fn outcome_dict<'py>(py: Python<'py>, o: &FrameOutcome) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("target", o.decision.target().label())?;
    d.set_item("matched", o.scored)?;
    d.set_item("face_detected", !matches!(o.decision, FrameDecision::NoFace { .. }))?;
    d.set_item("scores", o.decision.scores().map(|s| s.values().to_vec()))?;
    let matched_emotion = match &o.decision {
        FrameDecision::TemplateMatch { matched_emotion, .. } => Some(matched_emotion.label()),
        _ => None,
    };
    d.set_item("matched_emotion", matched_emotion)?;
    d.set_item("record_id", o.saved_record.as_deref())?;
    d.set_item("session", snapshot_dict(py, &o.snapshot)?)?;
    Ok(d)
}

/// A game engine writing to a collection store at `root`.
#[pyclass(frozen)]
struct Game(facegame_core::Engine);

#[pymethods]
impl Game {
    #[new]
    #[pyo3(signature = (backend, root, thresholds=None, bomb_ttl_ms=None, min_frame_interval_ms=None))]
    fn new(
        backend: &ReferenceBackend,
        root: PathBuf,
        thresholds: Option<Vec<f64>>,
        bomb_ttl_ms: Option<u64>,
        min_frame_interval_ms: Option<u64>,
    ) -> PyResult<Self> {
        let store = Arc::new(CollectionStore::open(root).map_err(err)?);
        let mut config = EngineConfig::default();
        if let Some(ttl) = bomb_ttl_ms {
            config.bomb_ttl_ms = ttl;
        }
        if let Some(gap) = min_frame_interval_ms {
            config.min_frame_interval_ms = gap;
        }
        let thresholds = match thresholds {
            Some(t) => ThresholdTable::new(seven(t, "thresholds")?).map_err(err)?,
            None => ThresholdTable::default(),
        };
        let classifier: Arc<dyn EmotionClassifier> = backend.0.clone();
        Ok(Self(
            facegame_core::Engine::builder(classifier, store)
                .config(config)
                .thresholds(thresholds)
                .build(),
        ))
    }

    #[pyo3(signature = (mode="general", player_id=None, seed=None))]
    fn start_session<'py>(
        &self,
        py: Python<'py>,
        mode: &str,
        player_id: Option<String>,
        seed: Option<u64>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let mode = mode.parse::<GameMode>().map_err(|e| PyValueError::new_err(e.to_string()))?;
        let s = self
            .0
            .start_session(StartRequest {
                mode: Some(mode),
                player_id,
                seed,
                scheduler_policy: None,
            })
            .map_err(err)?;
        snapshot_dict(py, &s)
    }

    fn session<'py>(&self, py: Python<'py>, session_id: &str) -> PyResult<Bound<'py, PyDict>> {
        snapshot_dict(py, &self.0.session_snapshot(session_id).map_err(err)?.0)
    }

    fn submit_frame<'py>(&self, py: Python<'py>, session_id: &str, image_bytes: &[u8]) -> PyResult<Bound<'py, PyDict>> {
        let img = image(image_bytes)?;
        let outcome = py.detach(|| self.0.submit_frame(session_id, &img)).map_err(err)?;
        outcome_dict(py, &outcome)
    }

    /// Returns the labels registered so far.
    fn register_template(&self, player_id: &str, emotion_label: &str, image_bytes: &[u8]) -> PyResult<Vec<&'static str>> {
        let registry = self.0.registry();
        registry
            .register_template(player_id, emotion(emotion_label)?, &image(image_bytes)?)
            .map_err(err)?;
        let set = registry.snapshot(player_id).map_err(err)?.unwrap_or_else(|| facegame_core::TemplateSet::new(player_id));
        Ok(set.present().iter().map(|e| e.label()).collect())
    }

    fn complete_registration(&self, player_id: &str) -> PyResult<()> {
        self.0.registry().complete_registration(player_id).map(|_| ()).map_err(err)
    }

    fn counts<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        counts_dict(py, &self.0.store().counts())
    }
}

#[pymodule]
fn facegame(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("FacegameError", m.py().get_type::<FacegameError>())?;
    m.add_class::<ReferenceBackend>()?;
    m.add_class::<Game>()?;
    m.add_function(wrap_pyfunction!(emotions, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_scores, m)?)?;
    m.add_function(wrap_pyfunction!(top_emotion, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(distribution, m)?)?;
    m.add_function(wrap_pyfunction!(format_report, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_session, m)?)?;
    Ok(())
}
