//! The seven-class emotion taxonomy, probability vectors over it, and the
//! per-emotion threshold rule used to verify a player's expression.

use std::fmt;
use std::ops::{Index, IndexMut};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config;
use crate::error::{Error, Result};

pub const NUM_EMOTIONS: usize = 7;

/// Absolute tolerance on the sum of a probability vector.
pub const SUM_TOLERANCE: f64 = 1e-6;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Canonical emotion labels. The discriminant is the canonical index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Angry = 0,
    Disgust = 1,
    Fear = 2,
    Happy = 3,
    Neutral = 4,
    Sad = 5,
    Surprise = 6,
}

impl Emotion {
    pub const ALL: [Emotion; NUM_EMOTIONS] = [
        Emotion::Angry,
        Emotion::Disgust,
        Emotion::Fear,
        Emotion::Happy,
        Emotion::Neutral,
        Emotion::Sad,
        Emotion::Surprise,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Emotion> {
        Self::ALL.get(index).copied()
    }

    /// Lowercase label used in files and on the wire.
    pub fn label(self) -> &'static str {
        match self {
            Emotion::Angry => "angry",
            Emotion::Disgust => "disgust",
            Emotion::Fear => "fear",
            Emotion::Happy => "happy",
            Emotion::Neutral => "neutral",
            Emotion::Sad => "sad",
            Emotion::Surprise => "surprise",
        }
    }

    /// Capitalized name used in rendered tables.
    pub fn name(self) -> &'static str {
        match self {
            Emotion::Angry => "Angry",
            Emotion::Disgust => "Disgust",
            Emotion::Fear => "Fear",
            Emotion::Happy => "Happy",
            Emotion::Neutral => "Neutral",
            Emotion::Sad => "Sad",
            Emotion::Surprise => "Surprise",
        }
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownEmotion(pub String);

impl fmt::Display for UnknownEmotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown emotion label {:?}", self.0)
    }
}

impl std::error::Error for UnknownEmotion {}

impl FromStr for Emotion {
    type Err = UnknownEmotion;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        Emotion::ALL
            .into_iter()
            .find(|e| e.label() == lower)
            .ok_or_else(|| UnknownEmotion(s.to_string()))
    }
}

/// A probability vector over the seven emotions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmotionScores([f64; NUM_EMOTIONS]);

impl EmotionScores {
    /// Wraps an already-normalized vector, checking the probability invariants.
    pub fn new(values: [f64; NUM_EMOTIONS]) -> Result<Self> {
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() || *v < 0.0 || *v > 1.0 {
                return Err(Error::InvalidScores(format!(
                    "component {} = {v} outside [0, 1]",
                    Emotion::ALL[i].label()
                )));
            }
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidScores(format!("components sum to {sum}")));
        }
        Ok(Self(values))
    }

    pub fn uniform() -> Self {
        Self([1.0 / NUM_EMOTIONS as f64; NUM_EMOTIONS])
    }

    pub fn values(&self) -> &[f64; NUM_EMOTIONS] {
        &self.0
    }

    pub fn get(&self, emotion: Emotion) -> f64 {
        self.0[emotion.index()]
    }
}

impl Index<Emotion> for EmotionScores {
    type Output = f64;

    fn index(&self, emotion: Emotion) -> &f64 {
        &self.0[emotion.index()]
    }
}

/// Scales non-negative raw backend outputs into a probability vector.
pub fn normalize_scores(raw: &[f64; NUM_EMOTIONS]) -> Result<EmotionScores> {
    if let Some((i, v)) = raw
        .iter()
        .enumerate()
        .find(|(_, v)| !v.is_finite() || **v < 0.0)
    {
        return Err(Error::InvalidScores(format!(
            "component {} = {v} is negative or not finite",
            Emotion::ALL[i].label()
        )));
    }
    let sum: f64 = raw.iter().sum();
    if sum <= 0.0 || !sum.is_finite() {
        return Err(Error::InvalidScores(format!("components sum to {sum}")));
    }
    let mut out = [0.0; NUM_EMOTIONS];
    for (o, v) in out.iter_mut().zip(raw) {
        *o = (v / sum).min(1.0);
    }
    EmotionScores::new(out)
}

/// Index of the largest component; ties go to the lowest canonical index.
pub(crate) fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Index of the smallest component; ties go to the lowest canonical index.
pub(crate) fn argmin<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

/// Recognition mode: the most probable emotion, lowest index on ties.
pub fn top_emotion(scores: &EmotionScores) -> Emotion {
    Emotion::ALL[argmax(scores.values())]
}

/// One threshold per emotion, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTable([f64; NUM_EMOTIONS]);

impl Default for ThresholdTable {
    fn default() -> Self {
        Self([DEFAULT_THRESHOLD; NUM_EMOTIONS])
    }
}

impl ThresholdTable {
    pub fn new(values: [f64; NUM_EMOTIONS]) -> Result<Self> {
        for (i, v) in values.iter().enumerate() {
            check_threshold(Emotion::ALL[i], *v)?;
        }
        Ok(Self(values))
    }

    pub fn uniform(value: f64) -> Result<Self> {
        Self::new([value; NUM_EMOTIONS])
    }

    pub fn get(&self, emotion: Emotion) -> f64 {
        self.0[emotion.index()]
    }

    pub fn set(&mut self, emotion: Emotion, value: f64) -> Result<()> {
        check_threshold(emotion, value)?;
        self.0[emotion.index()] = value;
        Ok(())
    }

    pub fn values(&self) -> &[f64; NUM_EMOTIONS] {
        &self.0
    }

    /// Parses `<label>=<real>` lines; emotions without a line keep the default.
    pub fn parse(text: &str) -> Result<Self> {
        let mut table = Self::default();
        for entry in config::parse_key_values(text)? {
            let emotion: Emotion = entry.key.parse().map_err(|e: UnknownEmotion| Error::Config {
                line: entry.line,
                reason: e.to_string(),
            })?;
            let value: f64 = entry.value.parse().map_err(|_| Error::Config {
                line: entry.line,
                reason: format!("threshold {:?} is not a number", entry.value),
            })?;
            table.set(emotion, value).map_err(|e| Error::Config {
                line: entry.line,
                reason: e.to_string(),
            })?;
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_config_string(&self) -> String {
        Emotion::ALL
            .iter()
            .map(|e| format!("{}={}\n", e.label(), self.get(*e)))
            .collect()
    }
}

fn check_threshold(emotion: Emotion, value: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&value) {
        return Err(Error::InvalidThreshold(format!(
            "{} threshold {value} outside [0, 1]",
            emotion.label()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerificationDecision {
    pub matched: bool,
    pub target: Emotion,
    pub target_score: f64,
    pub threshold_used: f64,
}

/// Verification mode: does the target's probability reach its threshold?
pub fn verify(
    target: Emotion,
    scores: &EmotionScores,
    thresholds: &ThresholdTable,
) -> VerificationDecision {
    let target_score = scores.get(target);
    let threshold_used = thresholds.get(target);
    VerificationDecision {
        matched: target_score >= threshold_used,
        target,
        target_score,
        threshold_used,
    }
}

/// Per-emotion sample counts. Serializes as a label-keyed object.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "EmotionMap<u64>", into = "EmotionMap<u64>")]
pub struct EmotionCounts(pub [u64; NUM_EMOTIONS]);

impl EmotionCounts {
    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }

    pub fn get(&self, emotion: Emotion) -> u64 {
        self.0[emotion.index()]
    }

    pub fn increment(&mut self, emotion: Emotion) {
        self.0[emotion.index()] += 1;
    }

    /// `max / min` over the seven classes; `None` if any class is empty.
    pub fn imbalance_ratio(&self) -> Option<f64> {
        let max = *self.0.iter().max()?;
        let min = *self.0.iter().min()?;
        (min > 0).then(|| max as f64 / min as f64)
    }
}

impl Index<Emotion> for EmotionCounts {
    type Output = u64;

    fn index(&self, emotion: Emotion) -> &u64 {
        &self.0[emotion.index()]
    }
}

impl IndexMut<Emotion> for EmotionCounts {
    fn index_mut(&mut self, emotion: Emotion) -> &mut u64 {
        &mut self.0[emotion.index()]
    }
}

/// Seven values keyed by emotion; serializes as an object with lowercase
/// labels in canonical order.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EmotionMap<T>(pub [T; NUM_EMOTIONS]);

impl<T> Index<Emotion> for EmotionMap<T> {
    type Output = T;

    fn index(&self, emotion: Emotion) -> &T {
        &self.0[emotion.index()]
    }
}

impl<T: Serialize> Serialize for EmotionMap<T> {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = serializer.serialize_map(Some(NUM_EMOTIONS))?;
        for e in Emotion::ALL {
            map.serialize_entry(e.label(), &self.0[e.index()])?;
        }
        map.end()
    }
}

impl<'de, T: Deserialize<'de>> Deserialize<'de> for EmotionMap<T> {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error as _;
        let map = std::collections::HashMap::<Emotion, T>::deserialize(deserializer)?;
        let mut slots: [Option<T>; NUM_EMOTIONS] = Default::default();
        for (e, v) in map {
            slots[e.index()] = Some(v);
        }
        let mut values = Vec::with_capacity(NUM_EMOTIONS);
        for (i, slot) in slots.into_iter().enumerate() {
            values.push(slot.ok_or_else(|| D::Error::custom(format!("missing emotion {}", Emotion::ALL[i].label())))?);
        }
        match values.try_into() {
            Ok(arr) => Ok(EmotionMap(arr)),
            Err(_) => unreachable!("seven values"),
        }
    }
}

impl From<EmotionMap<u64>> for EmotionCounts {
    fn from(m: EmotionMap<u64>) -> Self {
        EmotionCounts(m.0)
    }
}

impl From<EmotionCounts> for EmotionMap<u64> {
    fn from(c: EmotionCounts) -> Self {
        EmotionMap(c.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scores_with(pairs: &[(Emotion, f64)]) -> EmotionScores {
        let mut v = [0.0; NUM_EMOTIONS];
        for (e, p) in pairs {
            v[e.index()] = *p;
        }
        let rest = 1.0 - v.iter().sum::<f64>();
        let free: Vec<usize> = (0..NUM_EMOTIONS)
            .filter(|i| !pairs.iter().any(|(e, _)| e.index() == *i))
            .collect();
        for i in &free {
            v[*i] = rest / free.len() as f64;
        }
        EmotionScores::new(v).unwrap()
    }

    #[test]
    fn labels_round_trip() {
        for (i, e) in Emotion::ALL.iter().enumerate() {
            assert_eq!(e.index(), i);
            assert_eq!(Emotion::from_index(i), Some(*e));
            assert_eq!(e.label().parse::<Emotion>().unwrap(), *e);
            assert_eq!(e.name().parse::<Emotion>().unwrap(), *e);
        }
        assert!(Emotion::from_index(7).is_none());
        assert!("contempt".parse::<Emotion>().is_err());
    }

    #[test]
    fn normalize_examples() {
        let s = normalize_scores(&[1.0; 7]).unwrap();
        for v in s.values() {
            assert!((v - 1.0 / 7.0).abs() < 1e-12);
        }
        let s = normalize_scores(&[2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(s.values(), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            normalize_scores(&[0.0; 7]),
            Err(Error::InvalidScores(_))
        ));
        assert!(matches!(
            normalize_scores(&[1.0, -0.5, 0.0, 0.0, 0.0, 0.0, 0.0]),
            Err(Error::InvalidScores(_))
        ));
    }

    #[test]
    fn scores_reject_bad_vectors() {
        assert!(EmotionScores::new([0.5; 7]).is_err());
        assert!(EmotionScores::new([1.5, -0.5, 0.0, 0.0, 0.0, 0.0, 0.0]).is_err());
        assert!(EmotionScores::new([f64::NAN, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn verify_examples() {
        let mut t = ThresholdTable::default();
        let d = verify(Emotion::Happy, &scores_with(&[(Emotion::Happy, 0.62)]), &t);
        assert!(d.matched);
        assert_eq!(d.target_score, 0.62);
        assert_eq!(d.threshold_used, 0.5);

        t.set(Emotion::Fear, 0.30).unwrap();
        let d = verify(Emotion::Fear, &scores_with(&[(Emotion::Fear, 0.10)]), &t);
        assert!(!d.matched);

        t.set(Emotion::Angry, 0.0).unwrap();
        let d = verify(Emotion::Angry, &scores_with(&[(Emotion::Angry, 0.0)]), &t);
        assert!(d.matched);
    }

    #[test]
    fn top_emotion_examples() {
        let s = scores_with(&[(Emotion::Angry, 0.9)]);
        assert_eq!(top_emotion(&s), Emotion::Angry);
        assert_eq!(top_emotion(&EmotionScores::uniform()), Emotion::Angry);
        let s = scores_with(&[
            (Emotion::Surprise, 0.5),
            (Emotion::Happy, 0.5),
            (Emotion::Angry, 0.0),
            (Emotion::Disgust, 0.0),
            (Emotion::Fear, 0.0),
            (Emotion::Neutral, 0.0),
            (Emotion::Sad, 0.0),
        ]);
        assert_eq!(top_emotion(&s), Emotion::Happy);
    }

    #[test]
    fn threshold_config_parsing() {
        let t = ThresholdTable::parse("happy=0.7\n# comment\nfear = 0.25\n").unwrap();
        assert_eq!(t.get(Emotion::Happy), 0.7);
        assert_eq!(t.get(Emotion::Fear), 0.25);
        assert_eq!(t.get(Emotion::Sad), DEFAULT_THRESHOLD);

        assert!(matches!(
            ThresholdTable::parse("happy=1.5\n"),
            Err(Error::Config { line: 1, .. })
        ));
        assert!(matches!(
            ThresholdTable::parse("\njoy=0.5\n"),
            Err(Error::Config { line: 2, .. })
        ));
        assert!(matches!(
            ThresholdTable::parse("sad=high\n"),
            Err(Error::Config { line: 1, .. })
        ));

        let round = ThresholdTable::parse(&t.to_config_string()).unwrap();
        assert_eq!(round, t);
    }

    #[test]
    fn emotion_map_json() {
        let m = EmotionMap([1u64, 2, 3, 4, 5, 6, 7]);
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(
            json,
            r#"{"angry":1,"disgust":2,"fear":3,"happy":4,"neutral":5,"sad":6,"surprise":7}"#
        );
        assert_eq!(serde_json::from_str::<EmotionMap<u64>>(&json).unwrap(), m);
        assert!(serde_json::from_str::<EmotionMap<u64>>(r#"{"angry":1}"#).is_err());
    }

    #[test]
    fn imbalance_ratio() {
        let c = EmotionCounts([2, 4, 8, 2, 2, 2, 2]);
        assert_eq!(c.imbalance_ratio(), Some(4.0));
        assert_eq!(EmotionCounts::default().imbalance_ratio(), None);
    }

    fn raw_vector() -> impl Strategy<Value = [f64; 7]> {
        prop::array::uniform7(0.001f64..100.0)
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(raw in raw_vector()) {
            let once = normalize_scores(&raw).unwrap();
            let twice = normalize_scores(once.values()).unwrap();
            for (a, b) in once.values().iter().zip(twice.values()) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }

        #[test]
        fn argmax_is_scale_invariant(raw in raw_vector()) {
            let normalized = normalize_scores(&raw).unwrap();
            prop_assert_eq!(top_emotion(&normalized).index(), argmax(&raw));
        }

        #[test]
        fn verify_agrees_with_comparison(
            raw in raw_vector(),
            thresholds in prop::array::uniform7(0.0f64..=1.0),
            target in 0usize..7,
        ) {
            let scores = normalize_scores(&raw).unwrap();
            let table = ThresholdTable::new(thresholds).unwrap();
            let target = Emotion::ALL[target];
            let d = verify(target, &scores, &table);
            prop_assert_eq!(d.matched, scores.values()[target.index()] >= thresholds[target.index()]);
        }

        #[test]
        fn lowering_threshold_never_unmatches(
            raw in raw_vector(),
            threshold in 0.0f64..=1.0,
            drop in 0.0f64..=1.0,
            target in 0usize..7,
        ) {
            let scores = normalize_scores(&raw).unwrap();
            let target = Emotion::ALL[target];
            let high = ThresholdTable::uniform(threshold).unwrap();
            let low = ThresholdTable::uniform(threshold * (1.0 - drop)).unwrap();
            if verify(target, &scores, &high).matched {
                prop_assert!(verify(target, &scores, &low).matched);
            }
        }
    }
}
