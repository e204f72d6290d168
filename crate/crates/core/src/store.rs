//! Append-only store of auto-labeled face images.
//!
//! Layout under the store root:
//!
//! ```text
//! manifest.tsv
//! images/<emotion>/<record_id>.png
//! ```
//!
//! Manifest lines are tab-separated: record id, emotion label, image path
//! relative to the root, session id, player id or `-`, mode, verified (`0`/`1`),
//! target score with four decimals, UTC timestamp (RFC 3339, milliseconds, `Z`).
//! An image is always written before the line that references it.

use std::fs::{self, File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::emotion::{Emotion, EmotionCounts};
use crate::engine::GameMode;
use crate::error::{Error, Result};
use crate::face::FaceImage;

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const IMAGES_DIR: &str = "images";
const FIELDS: usize = 9;

#[derive(Debug, Clone, PartialEq)]
pub struct SampleMetadata {
    pub session_id: String,
    pub player_id: Option<String>,
    pub mode: GameMode,
    /// `true` for frames the engine adjudicated as matching the label.
    pub verified: bool,
    pub target_score: f64,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub record_id: String,
    pub label: Emotion,
    /// Relative to the store root.
    pub image_path: PathBuf,
    pub session_id: String,
    pub player_id: Option<String>,
    pub mode: GameMode,
    pub verified: bool,
    pub target_score: f64,
    pub timestamp: DateTime<Utc>,
}

impl DatasetRecord {
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.4}\t{}",
            self.record_id,
            self.label.label(),
            self.image_path.to_string_lossy(),
            self.session_id,
            self.player_id.as_deref().unwrap_or("-"),
            self.mode.label(),
            u8::from(self.verified),
            self.target_score,
            self.timestamp.to_rfc3339_opts(SecondsFormat::Millis, true),
        )
    }

    pub fn parse_line(line: &str, line_no: usize) -> Result<Self> {
        let bad = |reason: String| Error::ManifestParse {
            line: line_no,
            reason,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != FIELDS {
            return Err(bad(format!("expected {FIELDS} fields, got {}", fields.len())));
        }
        let non_empty = |i: usize, name: &str| {
            if fields[i].is_empty() {
                Err(bad(format!("empty {name}")))
            } else {
                Ok(fields[i].to_string())
            }
        };
        let record_id = non_empty(0, "record id")?;
        let label = fields[1].parse::<Emotion>().map_err(|e| bad(e.to_string()))?;
        if fields[1] != label.label() {
            return Err(bad(format!("label {:?} is not canonical", fields[1])));
        }
        let image_path = PathBuf::from(non_empty(2, "image path")?);
        let session_id = non_empty(3, "session id")?;
        let player_id = match fields[4] {
            "-" => None,
            "" => return Err(bad("empty player id".into())),
            p => Some(p.to_string()),
        };
        let mode = fields[5].parse::<GameMode>().map_err(bad)?;
        let verified = match fields[6] {
            "0" => false,
            "1" => true,
            other => return Err(bad(format!("verified flag {other:?}"))),
        };
        let target_score: f64 = fields[7]
            .parse()
            .map_err(|_| bad(format!("target score {:?}", fields[7])))?;
        let timestamp = DateTime::parse_from_rfc3339(fields[8])
            .map_err(|e| bad(format!("timestamp {:?}: {e}", fields[8])))?
            .with_timezone(&Utc);
        Ok(Self {
            record_id,
            label,
            image_path,
            session_id,
            player_id,
            mode,
            verified,
            target_score,
            timestamp,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<DatasetRecord>,
    pub counts: EmotionCounts,
}

impl DatasetManifest {
    pub fn parse(text: &str) -> Result<Self> {
        let mut manifest = Self::default();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let record = DatasetRecord::parse_line(line, i + 1)?;
            manifest.counts.increment(record.label);
            manifest.records.push(record);
        }
        Ok(manifest)
    }

    pub fn read(path: &Path) -> Result<Self> {
        match fs::read_to_string(path) {
            Ok(text) => Self::parse(&text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(e.into()),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Per-emotion counts and their total; also the stats payload schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Distribution {
    pub counts: EmotionCounts,
    pub total: u64,
}

impl Distribution {
    pub fn from_counts(counts: EmotionCounts) -> Self {
        Self {
            counts,
            total: counts.total(),
        }
    }
}

/// Recounts labels from scratch.
pub fn distribution(manifest: &DatasetManifest) -> Distribution {
    let mut counts = EmotionCounts::default();
    for r in &manifest.records {
        counts.increment(r.label);
    }
    Distribution {
        counts,
        total: counts.total(),
    }
}

struct Writer {
    manifest: File,
    counts: EmotionCounts,
    records: u64,
}

/// The dataset being collected. Appends funnel through one writer lock.
pub struct CollectionStore {
    root: PathBuf,
    next_id: AtomicU64,
    writer: Mutex<Writer>,
}

impl CollectionStore {
    /// Opens or creates a store. A torn final manifest line left by a crash is
    /// dropped.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join(IMAGES_DIR))?;
        let path = root.join(MANIFEST_FILE);
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)?;
        let mut text = String::new();
        file.read_to_string(&mut text)?;
        if !text.is_empty() && !text.ends_with('\n') {
            let keep = text.rfind('\n').map_or(0, |i| i + 1);
            text.truncate(keep);
            file.set_len(keep as u64)?;
            file.seek(SeekFrom::End(0))?;
        }
        let manifest = DatasetManifest::parse(&text)?;
        let next_id = manifest
            .records
            .iter()
            .filter_map(|r| r.record_id.parse::<u64>().ok())
            .max()
            .map_or(1, |m| m + 1);
        Ok(Self {
            root,
            next_id: AtomicU64::new(next_id),
            writer: Mutex::new(Writer {
                manifest: file,
                counts: manifest.counts,
                records: manifest.records.len() as u64,
            }),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    /// Incrementally maintained counts.
    pub fn counts(&self) -> EmotionCounts {
        self.writer.lock().unwrap().counts
    }

    pub fn len(&self) -> u64 {
        self.writer.lock().unwrap().records
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes the PNG, then appends the manifest line. Returns the record id.
    pub fn save_sample(&self, image: &FaceImage, label: Emotion, meta: SampleMetadata) -> Result<String> {
        let record_id = format!("{:010}", self.next_id.fetch_add(1, Ordering::Relaxed));
        let rel = PathBuf::from(IMAGES_DIR)
            .join(label.label())
            .join(format!("{record_id}.png"));
        let abs = self.root.join(&rel);
        fs::create_dir_all(abs.parent().expect("image path has a parent"))?;
        let png = image.encode_png()?;
        let tmp = abs.with_extension("png.tmp");
        fs::write(&tmp, png)?;
        fs::rename(&tmp, &abs)?;

        let record = DatasetRecord {
            record_id: record_id.clone(),
            label,
            image_path: rel,
            session_id: meta.session_id,
            player_id: meta.player_id,
            mode: meta.mode,
            verified: meta.verified,
            target_score: meta.target_score,
            timestamp: meta.timestamp,
        };
        let mut line = record.to_line();
        line.push('\n');

        let mut w = self.writer.lock().unwrap();
        w.manifest.write_all(line.as_bytes())?;
        w.manifest.flush()?;
        w.counts.increment(label);
        w.records += 1;
        Ok(record_id)
    }

    pub fn manifest(&self) -> Result<DatasetManifest> {
        // hold the writer so we never read a half-appended line
        let _w = self.writer.lock().unwrap();
        DatasetManifest::read(&self.manifest_path())
    }

    pub fn distribution(&self) -> Result<Distribution> {
        Ok(distribution(&self.manifest()?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub record_id: String,
    pub image: FaceImage,
    pub label: Emotion,
}

/// A dataset on disk, read in manifest order.
#[derive(Debug, Clone)]
pub struct Dataset {
    root: PathBuf,
    manifest: DatasetManifest,
}

/// Opens the dataset rooted at `root`. The manifest must exist.
pub fn load_dataset(root: impl Into<PathBuf>) -> Result<Dataset> {
    let root = root.into();
    let path = root.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no manifest at {}", path.display()),
        )));
    }
    let manifest = DatasetManifest::read(&path)?;
    Ok(Dataset { root, manifest })
}

impl Dataset {
    pub fn name(&self) -> String {
        self.root
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into())
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.manifest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = Result<LabeledSample>> + '_ {
        self.manifest.records.iter().map(|r| self.load_record(r))
    }

    /// Every sample, or the first error.
    pub fn samples(&self) -> Result<Vec<LabeledSample>> {
        self.iter().collect()
    }

    fn load_record(&self, record: &DatasetRecord) -> Result<LabeledSample> {
        let path = self.root.join(&record.image_path);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::DanglingRecord {
                    record_id: record.record_id.clone(),
                    path,
                })
            }
            Err(e) => return Err(e.into()),
        };
        Ok(LabeledSample {
            record_id: record.record_id.clone(),
            image: FaceImage::decode(&bytes)?,
            label: record.label,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn meta(session: &str) -> SampleMetadata {
        SampleMetadata {
            session_id: session.into(),
            player_id: None,
            mode: GameMode::General,
            verified: true,
            target_score: 0.61234,
            timestamp: Utc.with_ymd_and_hms(2026, 3, 4, 5, 6, 7).unwrap(),
        }
    }

    fn img(v: u8) -> FaceImage {
        FaceImage::from_fn(16, 16, |x, y| [v, x as u8, y as u8]).unwrap()
    }

    #[test]
    fn line_format_is_exact() {
        let r = DatasetRecord {
            record_id: "0000000042".into(),
            label: Emotion::Fear,
            image_path: PathBuf::from("images/fear/0000000042.png"),
            session_id: "s1".into(),
            player_id: Some("alice".into()),
            mode: GameMode::Customized,
            verified: true,
            target_score: 0.5,
            timestamp: Utc.with_ymd_and_hms(2026, 10, 16, 13, 4, 5).unwrap(),
        };
        let line = r.to_line();
        assert_eq!(
            line,
            "0000000042\tfear\timages/fear/0000000042.png\ts1\talice\tcustomized\t1\t0.5000\t2026-10-16T13:04:05.000Z"
        );
        assert_eq!(DatasetRecord::parse_line(&line, 1).unwrap(), r);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let good = DatasetRecord::parse_line(
            "1\tsad\timages/sad/1.png\ts\t-\tgeneral\t0\t0.1000\t2026-01-01T00:00:00.000Z",
            1,
        )
        .unwrap();
        let text = format!("{}\n{}\nbroken line\n", good.to_line(), good.to_line());
        match DatasetManifest::parse(&text) {
            Err(Error::ManifestParse { line: 3, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let bad_label = good.to_line().replace("\tsad\t", "\tjoy\t");
        assert!(matches!(
            DatasetManifest::parse(&bad_label),
            Err(Error::ManifestParse { line: 1, .. })
        ));
    }

    #[test]
    fn save_updates_counts_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let store = CollectionStore::open(dir.path()).unwrap();
        assert_eq!(store.distribution().unwrap().total, 0);
        let id = store.save_sample(&img(1), Emotion::Fear, meta("s")).unwrap();
        assert_eq!(store.counts().0, [0, 0, 1, 0, 0, 0, 0]);
        assert!(dir.path().join("images/fear").join(format!("{id}.png")).exists());

        for i in 0..9 {
            store.save_sample(&img(i), Emotion::ALL[i as usize % 7], meta("s")).unwrap();
        }
        let text = fs::read_to_string(store.manifest_path()).unwrap();
        assert_eq!(text.lines().count(), 10);
        let d = store.distribution().unwrap();
        assert_eq!(d.total, 10);
        assert_eq!(d.counts, store.counts());
    }

    #[test]
    fn reopen_recovers_counts_ids_and_torn_lines() {
        let dir = tempfile::tempdir().unwrap();
        let first = {
            let store = CollectionStore::open(dir.path()).unwrap();
            store.save_sample(&img(1), Emotion::Happy, meta("a")).unwrap();
            store.save_sample(&img(2), Emotion::Happy, meta("a")).unwrap()
        };
        let mut f = OpenOptions::new().append(true).open(dir.path().join(MANIFEST_FILE)).unwrap();
        f.write_all(b"0000000099\thap").unwrap();
        drop(f);

        let store = CollectionStore::open(dir.path()).unwrap();
        assert_eq!(store.counts().get(Emotion::Happy), 2);
        let next = store.save_sample(&img(3), Emotion::Sad, meta("b")).unwrap();
        assert!(next > first);
        let m = store.manifest().unwrap();
        assert_eq!(m.len(), 3);
    }

    #[test]
    fn load_dataset_in_order_and_detects_dangling() {
        let dir = tempfile::tempdir().unwrap();
        let store = CollectionStore::open(dir.path()).unwrap();
        let labels = [Emotion::Sad, Emotion::Angry, Emotion::Surprise];
        let mut ids = Vec::new();
        for (i, l) in labels.iter().enumerate() {
            ids.push(store.save_sample(&img(i as u8), *l, meta("s")).unwrap());
        }
        let ds = load_dataset(dir.path()).unwrap();
        let samples = ds.samples().unwrap();
        assert_eq!(samples.len(), 3);
        for (i, s) in samples.iter().enumerate() {
            assert_eq!(s.label, labels[i]);
            assert_eq!(s.record_id, ids[i]);
            assert_eq!(s.image, img(i as u8));
        }

        fs::remove_file(dir.path().join("images/angry").join(format!("{}.png", ids[1]))).unwrap();
        match ds.samples() {
            Err(Error::DanglingRecord { record_id, .. }) => assert_eq!(record_id, ids[1]),
            other => panic!("unexpected {other:?}"),
        }
        assert!(load_dataset(dir.path().join("nope")).is_err());
    }
}
