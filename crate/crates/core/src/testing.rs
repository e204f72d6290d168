//! Fixture builders for tests. Enabled by the `test-support` feature.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{TimeZone, Utc};

use crate::emotion::{Emotion, EmotionCounts};
use crate::engine::GameMode;
use crate::error::Result;
use crate::eval::EvaluationReport;
use crate::face::FaceImage;
use crate::rng::SplitMix64;
use crate::store::{DatasetRecord, Distribution, IMAGES_DIR, MANIFEST_FILE};

/// `crates/core/fixtures`.
pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn load_stats(name: &str) -> Distribution {
    let path = fixtures_dir().join(name);
    let text = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// The four evaluation fixture reports in table column order.
pub fn fixture_reports() -> Vec<EvaluationReport> {
    ["cife_self", "gamo_self", "cife_cross", "gamo_cross"]
        .iter()
        .map(|n| {
            EvaluationReport::load(&fixtures_dir().join("reports").join(format!("{n}.json")))
                .unwrap_or_else(|e| panic!("{n}: {e}"))
        })
        .collect()
}

/// Manifest text with exactly `counts[e]` records per emotion, labels
/// interleaved in a seed-dependent order. No images are written.
pub fn manifest_for_counts(counts: &EmotionCounts, seed: u64) -> String {
    let mut labels: Vec<Emotion> = Emotion::ALL
        .iter()
        .flat_map(|e| std::iter::repeat_n(*e, counts.get(*e) as usize))
        .collect();
    let mut rng = SplitMix64::new(seed);
    for i in (1..labels.len()).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        labels.swap(i, j);
    }
    let base = Utc.with_ymd_and_hms(2026, 1, 1, 0, 0, 0).unwrap();
    let mut out = String::new();
    for (i, label) in labels.into_iter().enumerate() {
        let record_id = format!("{:010}", i + 1);
        let record = DatasetRecord {
            image_path: PathBuf::from(IMAGES_DIR).join(label.label()).join(format!("{record_id}.png")),
            record_id,
            label,
            session_id: format!("fixture-{}", i / 50),
            player_id: Some(format!("player{}", i % 13)),
            mode: if i % 3 == 0 { GameMode::General } else { GameMode::Customized },
            verified: true,
            target_score: rng.next_f64(),
            timestamp: base + chrono::Duration::seconds(i as i64),
        };
        let _ = writeln!(out, "{}", record.to_line());
    }
    out
}

/// Writes a manifest-only store at `root`.
pub fn write_manifest(root: &Path, counts: &EmotionCounts, seed: u64) -> Result<PathBuf> {
    fs::create_dir_all(root)?;
    let path = root.join(MANIFEST_FILE);
    fs::write(&path, manifest_for_counts(counts, seed))?;
    Ok(path)
}

/// Random RGB noise; always has a detectable face under the reference detector.
pub fn noise_face(seed: u64, width: u32, height: u32) -> FaceImage {
    let mut rng = SplitMix64::new(seed);
    FaceImage::from_fn(width, height, |_, _| {
        let v = rng.next_u64();
        [v as u8, (v >> 8) as u8, (v >> 16) as u8]
    })
    .expect("valid size")
}

/// Predicts the emotion whose index is `red / 32` at the image centre, with
/// probability 0.9. Pair with [`face_showing`].
pub struct RedChannelClassifier {
    descriptor: crate::backend::BackendDescriptor,
}

impl Default for RedChannelClassifier {
    fn default() -> Self {
        Self {
            descriptor: crate::backend::BackendDescriptor {
                name: "red-channel".into(),
                input_side: 16,
                feature_dimension: 7,
                weights_source: crate::backend::WeightsSource::Inline(Vec::new()),
            },
        }
    }
}

impl RedChannelClassifier {
    fn shown(image: &FaceImage) -> Emotion {
        let [r, _, _] = image.pixel(image.width() / 2, image.height() / 2);
        Emotion::from_index((r / 32) as usize % 7).expect("index below 7")
    }
}

impl crate::backend::EmotionClassifier for RedChannelClassifier {
    fn descriptor(&self) -> &crate::backend::BackendDescriptor {
        &self.descriptor
    }

    fn classify(&self, image: &FaceImage) -> Result<crate::emotion::EmotionScores> {
        let mut v = [0.1 / 6.0; 7];
        v[Self::shown(image).index()] = 0.9;
        crate::emotion::normalize_scores(&v)
    }

    fn embed(&self, image: &FaceImage) -> Result<crate::backend::FeatureVector> {
        let mut v = vec![0.0; 7];
        v[Self::shown(image).index()] = 1.0;
        crate::backend::FeatureVector::new(v)
    }
}

/// A textured frame that [`RedChannelClassifier`] reads as `emotion`.
pub fn face_showing(emotion: Emotion, seed: u64, width: u32, height: u32) -> FaceImage {
    let mut rng = SplitMix64::new(seed);
    let red = emotion.index() as u8 * 32 + 8;
    FaceImage::from_fn(width, height, |_, _| [red, rng.next_u64() as u8, 40]).expect("valid size")
}
