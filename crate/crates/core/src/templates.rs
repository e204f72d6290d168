//! Per-player emotion templates and nearest-template matching.
//!
//! Template file (`<dir>/<player_id>.gmt`), little-endian:
//! magic `b"GMT1"`, `u32` feature dimension, one presence byte (bit `i` set
//! when emotion `i` is present, bit 7 clear), then the present features in
//! canonical emotion order as `f32`s.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use crate::backend::{EmotionClassifier, FeatureVector};
use crate::emotion::{Emotion, NUM_EMOTIONS};
use crate::error::{Error, Result};
use crate::face::{detect_and_crop, FaceDetector, FaceImage};

pub const TEMPLATE_MAGIC: &[u8; 4] = b"GMT1";
pub const TEMPLATE_EXTENSION: &str = "gmt";

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSet {
    pub player_id: String,
    templates: [Option<FeatureVector>; NUM_EMOTIONS],
}

impl TemplateSet {
    pub fn new(player_id: impl Into<String>) -> Self {
        Self {
            player_id: player_id.into(),
            templates: Default::default(),
        }
    }

    pub fn get(&self, emotion: Emotion) -> Option<&FeatureVector> {
        self.templates[emotion.index()].as_ref()
    }

    /// Stores `feature` for `emotion`, replacing any earlier capture. All
    /// templates in a set share one dimension.
    pub fn insert(&mut self, emotion: Emotion, feature: FeatureVector) -> Result<()> {
        if let Some(dim) = self.dimension() {
            let replacing_only = self.present().len() == 1 && self.get(emotion).is_some();
            if dim != feature.dimension() && !replacing_only {
                return Err(Error::Backend(format!(
                    "template dimension {} does not match set dimension {dim}",
                    feature.dimension()
                )));
            }
        }
        self.templates[emotion.index()] = Some(feature);
        Ok(())
    }

    pub fn dimension(&self) -> Option<usize> {
        self.templates.iter().flatten().map(|f| f.dimension()).next()
    }

    pub fn present(&self) -> Vec<Emotion> {
        Emotion::ALL
            .into_iter()
            .filter(|e| self.get(*e).is_some())
            .collect()
    }

    pub fn missing(&self) -> Vec<Emotion> {
        Emotion::ALL
            .into_iter()
            .filter(|e| self.get(*e).is_none())
            .collect()
    }

    pub fn is_complete(&self) -> bool {
        self.templates.iter().all(Option::is_some)
    }

    /// Emotion of the closest template by L2 distance, lowest index on ties.
    /// `None` unless the set is complete.
    pub fn nearest(&self, query: &FeatureVector) -> Option<Emotion> {
        let distances = self.squared_distances(query)?;
        Some(Emotion::ALL[crate::emotion::argmin(&distances)])
    }

    /// Squared distances from `query` to each template, canonical order.
    pub fn squared_distances(&self, query: &FeatureVector) -> Option<[f64; NUM_EMOTIONS]> {
        let mut out = [0.0; NUM_EMOTIONS];
        for (o, t) in out.iter_mut().zip(&self.templates) {
            let t = t.as_ref()?;
            if t.dimension() != query.dimension() {
                return None;
            }
            *o = t.squared_distance(query);
        }
        Some(out)
    }

    pub fn encode(&self) -> Vec<u8> {
        let dim = self.dimension().unwrap_or(0) as u32;
        let mut out = Vec::new();
        out.extend_from_slice(TEMPLATE_MAGIC);
        out.extend_from_slice(&dim.to_le_bytes());
        let bitmap = self
            .templates
            .iter()
            .enumerate()
            .filter(|(_, t)| t.is_some())
            .fold(0u8, |acc, (i, _)| acc | (1 << i));
        out.push(bitmap);
        for f in self.templates.iter().flatten() {
            for v in f.components() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(player_id: impl Into<String>, bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 9 || &bytes[..4] != TEMPLATE_MAGIC {
            return Err("missing GMT1 header".into());
        }
        let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let bitmap = bytes[8];
        if bitmap & 0x80 != 0 {
            return Err(format!("invalid presence bitmap {bitmap:#04x}"));
        }
        let present = bitmap.count_ones() as usize;
        if present > 0 && dim == 0 {
            return Err("zero feature dimension".into());
        }
        let expected = 9 + present * dim * 4;
        if bytes.len() != expected {
            return Err(format!("expected {expected} bytes, got {}", bytes.len()));
        }
        let mut set = TemplateSet::new(player_id);
        let mut floats = bytes[9..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()));
        for e in Emotion::ALL {
            if bitmap & (1 << e.index()) != 0 {
                let components: Vec<f32> = floats.by_ref().take(dim).collect();
                let feature = FeatureVector::new(components).map_err(|e| e.to_string())?;
                set.templates[e.index()] = Some(feature);
            }
        }
        Ok(set)
    }
}

/// Player ids double as file names: 1 to 64 characters of `[A-Za-z0-9_.-]`,
/// not starting with a dot.
pub fn validate_player_id(player_id: &str) -> Result<()> {
    let ok = !player_id.is_empty()
        && player_id.len() <= 64
        && !player_id.starts_with('.')
        && player_id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::UnregisteredPlayer(player_id.to_string()))
    }
}

#[derive(Debug)]
struct PlayerEntry {
    set: TemplateSet,
    /// Set once the player has sent the complete set.
    completed: bool,
}

/// Shared template store. Each player's entry has its own lock, so work for
/// different players proceeds independently and a match never sees a
/// half-written set.
pub struct TemplateRegistry {
    classifier: Arc<dyn EmotionClassifier>,
    detector: Arc<dyn FaceDetector>,
    dir: Option<PathBuf>,
    players: RwLock<HashMap<String, Arc<RwLock<PlayerEntry>>>>,
}

impl TemplateRegistry {
    /// In-memory registry.
    pub fn new(classifier: Arc<dyn EmotionClassifier>, detector: Arc<dyn FaceDetector>) -> Self {
        Self {
            classifier,
            detector,
            dir: None,
            players: RwLock::new(HashMap::new()),
        }
    }

    /// Registry that persists completed sets under `dir`.
    pub fn with_dir(
        classifier: Arc<dyn EmotionClassifier>,
        detector: Arc<dyn FaceDetector>,
        dir: impl Into<PathBuf>,
    ) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir: Some(dir),
            ..Self::new(classifier, detector)
        })
    }

    pub fn classifier(&self) -> &Arc<dyn EmotionClassifier> {
        &self.classifier
    }

    fn path_for(&self, player_id: &str) -> Option<PathBuf> {
        self.dir
            .as_ref()
            .map(|d| d.join(format!("{player_id}.{TEMPLATE_EXTENSION}")))
    }

    fn entry(&self, player_id: &str, create: bool) -> Result<Option<Arc<RwLock<PlayerEntry>>>> {
        validate_player_id(player_id)?;
        if let Some(e) = self.players.read().unwrap().get(player_id) {
            return Ok(Some(Arc::clone(e)));
        }
        let from_disk = match self.path_for(player_id) {
            Some(path) if path.exists() => Some(read_template_file(player_id, &path)?),
            _ => None,
        };
        if from_disk.is_none() && !create {
            return Ok(None);
        }
        let mut players = self.players.write().unwrap();
        let entry = players.entry(player_id.to_string()).or_insert_with(|| {
            let set = from_disk.unwrap_or_else(|| TemplateSet::new(player_id));
            let completed = set.is_complete();
            Arc::new(RwLock::new(PlayerEntry { set, completed }))
        });
        Ok(Some(Arc::clone(entry)))
    }

    /// Detects the face, embeds it and stores it as the player's template for
    /// `emotion`. Returns the stored feature.
    pub fn register_template(
        &self,
        player_id: &str,
        emotion: Emotion,
        image: &FaceImage,
    ) -> Result<FeatureVector> {
        validate_player_id(player_id)?;
        let face = detect_and_crop(self.detector.as_ref(), image)
            .ok_or(Error::NoFace { emotion: Some(emotion) })?;
        let feature = self.classifier.embed(&face)?;
        let entry = self.entry(player_id, true)?.expect("created");
        let mut guard = entry.write().unwrap();
        guard.set.insert(emotion, feature.clone())?;
        if guard.completed {
            self.persist(&guard.set)?;
        }
        Ok(feature)
    }

    /// Marks the player's set as sent. Idempotent once complete.
    pub fn complete_registration(&self, player_id: &str) -> Result<TemplateSet> {
        let Some(entry) = self.entry(player_id, false)? else {
            return Err(Error::IncompleteRegistration {
                missing: Emotion::ALL.to_vec(),
            });
        };
        let mut guard = entry.write().unwrap();
        if !guard.set.is_complete() {
            return Err(Error::IncompleteRegistration {
                missing: guard.set.missing(),
            });
        }
        if !guard.completed {
            self.persist(&guard.set)?;
            guard.completed = true;
        }
        Ok(guard.set.clone())
    }

    /// Snapshot of whatever the player has registered so far.
    pub fn snapshot(&self, player_id: &str) -> Result<Option<TemplateSet>> {
        Ok(self
            .entry(player_id, false)?
            .map(|e| e.read().unwrap().set.clone()))
    }

    pub fn is_registered(&self, player_id: &str) -> bool {
        matches!(self.entry(player_id, false), Ok(Some(e)) if e.read().unwrap().completed)
    }

    /// Emotion whose template is nearest to the embedding of the detected face.
    pub fn match_template(&self, player_id: &str, image: &FaceImage) -> Result<Emotion> {
        let entry = self.completed_entry(player_id)?;
        let face = detect_and_crop(self.detector.as_ref(), image).ok_or(Error::NoFace { emotion: None })?;
        let feature = self.classifier.embed(&face)?;
        self.match_feature_in(&entry, player_id, &feature)
    }

    /// Matching for an already-cropped face.
    pub fn match_face(&self, player_id: &str, face: &FaceImage) -> Result<Emotion> {
        let entry = self.completed_entry(player_id)?;
        let feature = self.classifier.embed(face)?;
        self.match_feature_in(&entry, player_id, &feature)
    }

    fn completed_entry(&self, player_id: &str) -> Result<Arc<RwLock<PlayerEntry>>> {
        match self.entry(player_id, false)? {
            Some(e) if e.read().unwrap().completed => Ok(e),
            _ => Err(Error::UnregisteredPlayer(player_id.to_string())),
        }
    }

    fn match_feature_in(
        &self,
        entry: &RwLock<PlayerEntry>,
        player_id: &str,
        feature: &FeatureVector,
    ) -> Result<Emotion> {
        entry
            .read()
            .unwrap()
            .set
            .nearest(feature)
            .ok_or_else(|| Error::UnregisteredPlayer(player_id.to_string()))
    }

    fn persist(&self, set: &TemplateSet) -> Result<()> {
        let Some(path) = self.path_for(&set.player_id) else {
            return Ok(());
        };
        let tmp = path.with_extension("gmt.tmp");
        fs::write(&tmp, set.encode())?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }
}

fn read_template_file(player_id: &str, path: &Path) -> Result<TemplateSet> {
    let bytes = fs::read(path)?;
    TemplateSet::decode(player_id, &bytes).map_err(|reason| Error::TemplateFile {
        path: path.to_path_buf(),
        reason,
    })
}
