//! Self/cross evaluation of classifier backends and study score aggregation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::EmotionClassifier;
use crate::emotion::{top_emotion, Emotion, EmotionCounts, EmotionMap, NUM_EMOTIONS};
use crate::error::{Error, Result};
use crate::store::LabeledSample;

/// Rows are true labels, columns predictions.
pub type ConfusionMatrix = [[u64; NUM_EMOTIONS]; NUM_EMOTIONS];

/// Accuracies of one backend on one dataset.
///
/// Serialized as JSON; `counts` and `total` mirror the dataset stats payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub dataset: String,
    pub backend: String,
    /// The backend was trained on a different dataset.
    #[serde(default)]
    pub cross: bool,
    /// Samples per true label.
    pub counts: EmotionMap<u64>,
    pub total: u64,
    pub accuracy: EmotionMap<f64>,
    /// Sample-weighted accuracy; the "Average" row.
    pub micro_average: f64,
    /// Mean per-emotion accuracy over emotions with samples.
    pub macro_average: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionMatrix>,
}

impl EvaluationReport {
    pub fn from_confusion(dataset: impl Into<String>, backend: impl Into<String>, cross: bool, confusion: ConfusionMatrix) -> Self {
        let mut counts = EmotionCounts::default();
        let mut accuracy = [0.0; NUM_EMOTIONS];
        let mut correct = 0u64;
        let mut supported = 0usize;
        let mut accuracy_sum = 0.0;
        for (i, row) in confusion.iter().enumerate() {
            let support: u64 = row.iter().sum();
            counts.0[i] = support;
            correct += row[i];
            if support > 0 {
                accuracy[i] = row[i] as f64 / support as f64;
                accuracy_sum += accuracy[i];
                supported += 1;
            }
        }
        let total = counts.total();
        Self {
            dataset: dataset.into(),
            backend: backend.into(),
            cross,
            counts: counts.into(),
            total,
            accuracy: EmotionMap(accuracy),
            micro_average: if total > 0 { correct as f64 / total as f64 } else { 0.0 },
            macro_average: if supported > 0 { accuracy_sum / supported as f64 } else { 0.0 },
            confusion: Some(confusion),
        }
    }

    /// Column heading: the backend's name, suffixed `cross` for cross runs.
    pub fn column_title(&self) -> String {
        if self.cross {
            format!("{} cross", self.backend)
        } else {
            self.backend.clone()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn confusion_of(classifier: &dyn EmotionClassifier, samples: &[LabeledSample]) -> Result<ConfusionMatrix> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let predictions: Vec<(Emotion, Emotion)> = samples
        .par_iter()
        .map(|s| Ok((s.label, top_emotion(&classifier.classify(&s.image)?))))
        .collect::<Result<_>>()?;
    let mut confusion = [[0u64; NUM_EMOTIONS]; NUM_EMOTIONS];
    for (truth, predicted) in predictions {
        confusion[truth.index()][predicted.index()] += 1;
    }
    Ok(confusion)
}

/// Classifies every sample by its top emotion and tallies the confusion matrix.
pub fn evaluate(classifier: &dyn EmotionClassifier, dataset_name: &str, samples: &[LabeledSample]) -> Result<EvaluationReport> {
    let confusion = confusion_of(classifier, samples)?;
    Ok(EvaluationReport::from_confusion(
        dataset_name,
        classifier.descriptor().name.clone(),
        false,
        confusion,
    ))
}

/// [`evaluate`] for a backend trained on another dataset.
pub fn cross_evaluate(classifier: &dyn EmotionClassifier, dataset_name: &str, samples: &[LabeledSample]) -> Result<EvaluationReport> {
    let confusion = confusion_of(classifier, samples)?;
    Ok(EvaluationReport::from_confusion(
        dataset_name,
        classifier.descriptor().name.clone(),
        true,
        confusion,
    ))
}

/// Renders a Markdown table: an `Average` row (micro average) then one row
/// per emotion, one column per report, two decimals.
pub fn format_report(reports: &[EvaluationReport]) -> String {
    let mut header = vec!["Emotion".to_string()];
    header.extend(reports.iter().map(EvaluationReport::column_title));

    let mut rows: Vec<Vec<String>> = Vec::with_capacity(NUM_EMOTIONS + 1);
    let mut average = vec!["Average".to_string()];
    average.extend(reports.iter().map(|r| format!("{:.2}", r.micro_average)));
    rows.push(average);
    for e in Emotion::ALL {
        let mut row = vec![e.name().to_string()];
        row.extend(reports.iter().map(|r| format!("{:.2}", r.accuracy[e])));
        rows.push(row);
    }

    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let render = |cells: &[String]| {
        let mut line = String::from("|");
        for (cell, w) in cells.iter().zip(&widths) {
            let _ = write!(line, " {cell:<w$} |");
        }
        line.push('\n');
        line
    };

    let mut out = render(&header);
    out.push('|');
    for w in &widths {
        out.push_str(&"-".repeat(w + 2));
        out.push('|');
    }
    out.push('\n');
    for row in &rows {
        out.push_str(&render(row));
    }
    out
}

/// One column recovered from a rendered table.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedColumn {
    pub title: String,
    pub average: f64,
    pub accuracy: [f64; NUM_EMOTIONS],
}

/// Inverse of [`format_report`], to two decimals.
pub fn parse_report_table(text: &str) -> Result<Vec<ParsedColumn>> {
    let bad = |reason: String| Error::InvalidArgument(format!("report table: {reason}"));
    let split = |line: &str| -> Vec<String> {
        line.trim()
            .trim_matches('|')
            .split('|')
            .map(|c| c.trim().to_string())
            .collect()
    };
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if lines.len() != NUM_EMOTIONS + 3 {
        return Err(bad(format!("expected {} lines, got {}", NUM_EMOTIONS + 3, lines.len())));
    }
    let header = split(lines[0]);
    let mut columns: Vec<ParsedColumn> = header[1..]
        .iter()
        .map(|t| ParsedColumn {
            title: t.clone(),
            average: 0.0,
            accuracy: [0.0; NUM_EMOTIONS],
        })
        .collect();
    let expected_rows = std::iter::once("Average").chain(Emotion::ALL.iter().map(|e| e.name()));
    for (line, expected) in lines[2..].iter().zip(expected_rows) {
        let cells = split(line);
        if cells.len() != header.len() || cells[0] != expected {
            return Err(bad(format!("unexpected row {line:?}")));
        }
        for (col, cell) in columns.iter_mut().zip(&cells[1..]) {
            let v: f64 = cell.parse().map_err(|_| bad(format!("cell {cell:?}")))?;
            match expected.parse::<Emotion>() {
                Ok(e) => col.accuracy[e.index()] = v,
                Err(_) => col.average = v,
            }
        }
    }
    Ok(columns)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub player_id: String,
    pub engine: String,
    /// 1-based.
    pub round: u32,
    pub score: u64,
}

/// Reads `player<TAB>engine<TAB>round<TAB>score` lines. A first line starting
/// with `player` is a header.
pub fn parse_study(text: &str) -> Result<Vec<StudyRecord>> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() || (i == 0 && line.starts_with("player")) {
            continue;
        }
        let bad = |reason: String| Error::IncompleteStudy(format!("line {line_no}: {reason}"));
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(bad(format!("expected 4 fields, got {}", fields.len())));
        }
        let round: u32 = fields[2].trim().parse().map_err(|_| bad(format!("round {:?}", fields[2])))?;
        if round == 0 {
            return Err(bad("round index starts at 1".into()));
        }
        let score: u64 = fields[3].trim().parse().map_err(|_| bad(format!("score {:?}", fields[3])))?;
        records.push(StudyRecord {
            player_id: fields[0].trim().to_string(),
            engine: fields[1].trim().to_string(),
            round,
            score,
        });
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyMean {
    pub player_id: String,
    pub engine: String,
    pub rounds: usize,
    pub mean_score: f64,
}

/// Mean final score per (player, engine). Every player must have played every
/// engine that appears in the study.
pub fn aggregate_scores(records: &[StudyRecord]) -> Result<Vec<StudyMean>> {
    if records.is_empty() {
        return Err(Error::IncompleteStudy("no records".into()));
    }
    let mut groups: BTreeMap<(&str, &str), Vec<u64>> = BTreeMap::new();
    let mut players = BTreeSet::new();
    let mut engines = BTreeSet::new();
    for r in records {
        players.insert(r.player_id.as_str());
        engines.insert(r.engine.as_str());
        groups.entry((&r.player_id, &r.engine)).or_default().push(r.score);
    }
    let missing: Vec<String> = players
        .iter()
        .flat_map(|p| engines.iter().map(move |e| (*p, *e)))
        .filter(|k| !groups.contains_key(k))
        .map(|(p, e)| format!("{p}/{e}"))
        .collect();
    if !missing.is_empty() {
        return Err(Error::IncompleteStudy(format!("no rounds for {}", missing.join(", "))));
    }
    Ok(groups
        .into_iter()
        .map(|((player, engine), scores)| StudyMean {
            player_id: player.to_string(),
            engine: engine.to_string(),
            rounds: scores.len(),
            mean_score: scores.iter().sum::<u64>() as f64 / scores.len() as f64,
        })
        .collect())
}

/// Plot-ready TSV with a header row.
pub fn format_study_means(means: &[StudyMean]) -> String {
    let mut out = String::from("player\tengine\trounds\tmean_score\n");
    for m in means {
        let _ = writeln!(out, "{}\t{}\t{}\t{:.4}", m.player_id, m.engine, m.rounds, m.mean_score);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{BackendDescriptor, FeatureVector, WeightsSource};
    use crate::emotion::EmotionScores;
    use crate::face::FaceImage;

    /// Predicts whatever emotion index is written in the red channel of pixel (0, 0).
    struct PixelOracle(BackendDescriptor);

    impl PixelOracle {
        fn new() -> Self {
            Self(BackendDescriptor {
                name: "oracle".into(),
                input_side: 16,
                feature_dimension: 1,
                weights_source: WeightsSource::Inline(Vec::new()),
            })
        }
    }

    impl EmotionClassifier for PixelOracle {
        fn descriptor(&self) -> &BackendDescriptor {
            &self.0
        }

        fn classify(&self, image: &FaceImage) -> Result<EmotionScores> {
            let mut v = [0.0; 7];
            v[image.pixel(0, 0)[0] as usize % 7] = 1.0;
            EmotionScores::new(v)
        }

        fn embed(&self, _: &FaceImage) -> Result<FeatureVector> {
            FeatureVector::new(vec![0.0])
        }
    }

    fn sample(label: Emotion, predicted: Emotion) -> LabeledSample {
        LabeledSample {
            record_id: String::new(),
            image: FaceImage::filled(16, 16, [predicted.index() as u8, 0, 0]).unwrap(),
            label,
        }
    }

    #[test]
    fn perfect_and_constant_backends() {
        let data: Vec<_> = Emotion::ALL.iter().flat_map(|e| (0..3).map(move |_| sample(*e, *e))).collect();
        let r = evaluate(&PixelOracle::new(), "d", &data).unwrap();
        assert!(r.accuracy.0.iter().all(|a| *a == 1.0));
        assert_eq!(r.micro_average, 1.0);

        let data: Vec<_> = Emotion::ALL.iter().flat_map(|e| (0..3).map(move |_| sample(*e, Emotion::Angry))).collect();
        let r = evaluate(&PixelOracle::new(), "d", &data).unwrap();
        assert_eq!(r.accuracy[Emotion::Angry], 1.0);
        assert!(r.accuracy.0[1..].iter().all(|a| *a == 0.0));
        assert!((r.micro_average - 1.0 / 7.0).abs() < 1e-15);
        assert!((r.macro_average - 1.0 / 7.0).abs() < 1e-15);
        let confusion = r.confusion.unwrap();
        for row in confusion {
            assert_eq!(row[0], 3);
        }
    }

    #[test]
    fn macro_skips_unsupported_classes() {
        let data = vec![
            sample(Emotion::Happy, Emotion::Happy),
            sample(Emotion::Sad, Emotion::Happy),
            sample(Emotion::Sad, Emotion::Sad),
            sample(Emotion::Sad, Emotion::Sad),
        ];
        let r = evaluate(&PixelOracle::new(), "d", &data).unwrap();
        assert_eq!(r.micro_average, 0.75);
        // (1 + 2/3) / 2
        assert!((r.macro_average - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(r.counts.0, [0, 0, 0, 1, 0, 3, 0]);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        assert!(matches!(evaluate(&PixelOracle::new(), "d", &[]), Err(Error::EmptyDataset)));
    }

    #[test]
    fn cross_uses_the_same_path() {
        let data: Vec<_> = (0..20).map(|i| sample(Emotion::ALL[i % 7], Emotion::ALL[(i * 3) % 7])).collect();
        let own = evaluate(&PixelOracle::new(), "d", &data).unwrap();
        let cross = cross_evaluate(&PixelOracle::new(), "d", &data).unwrap();
        assert_eq!(EvaluationReport { cross: false, ..cross.clone() }, own);
        assert_eq!(cross.column_title(), "oracle cross");
    }

    #[test]
    fn report_json_round_trip() {
        let data: Vec<_> = (0..20).map(|i| sample(Emotion::ALL[i % 7], Emotion::ALL[(i * 3) % 7])).collect();
        let r = evaluate(&PixelOracle::new(), "d", &data).unwrap();
        let back: EvaluationReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn single_report_table() {
        let confusion = {
            let mut c = [[0u64; 7]; 7];
            for (i, row) in c.iter_mut().enumerate() {
                row[i] = 1;
            }
            c
        };
        let r = EvaluationReport::from_confusion("d", "b", false, confusion);
        let table = format_report(std::slice::from_ref(&r));
        let expected = [
            "| Emotion  | b    |",
            "|----------|------|",
            "| Average  | 1.00 |",
            "| Angry    | 1.00 |",
            "| Disgust  | 1.00 |",
            "| Fear     | 1.00 |",
            "| Happy    | 1.00 |",
            "| Neutral  | 1.00 |",
            "| Sad      | 1.00 |",
            "| Surprise | 1.00 |",
        ];
        assert_eq!(table.lines().collect::<Vec<_>>(), expected);
        let parsed = parse_report_table(&table).unwrap();
        assert_eq!(parsed.len(), 1);
        assert_eq!(parsed[0].title, "b");
        assert_eq!(parsed[0].average, 1.0);
    }

    #[test]
    fn study_aggregation() {
        let rec = |p: &str, e: &str, round, score| StudyRecord {
            player_id: p.into(),
            engine: e.into(),
            round,
            score,
        };
        let means = aggregate_scores(&[rec("p1", "X", 1, 3), rec("p1", "X", 2, 5)]).unwrap();
        assert_eq!(means.len(), 1);
        assert_eq!(means[0].mean_score, 4.0);

        let err = aggregate_scores(&[rec("p1", "X", 1, 3), rec("p2", "Y", 1, 5)]);
        assert!(matches!(err, Err(Error::IncompleteStudy(_))));

        let text = "player\tengine\tround\tscore\np1\tX\t1\t3\np1\tX\t2\t5\n";
        let parsed = parse_study(text).unwrap();
        assert_eq!(parsed.len(), 2);
        assert!(parse_study("p1\tX\t0\t3\n").is_err());
        assert!(parse_study("p1\tX\t1\n").is_err());

        let tsv = format_study_means(&means);
        assert_eq!(tsv, "player\tengine\trounds\tmean_score\np1\tX\t2\t4.0000\n");
    }
}
