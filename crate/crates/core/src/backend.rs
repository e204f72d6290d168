//! Classifier backends.
//!
//! [`EmotionClassifier`] is the seam where a real CNN would plug in. The
//! reference backend shipped here is a two-stage affine model:
//!
//! 1. resize the (already cropped) face to `input_side x input_side` by
//!    nearest neighbour, `src = dst * src_len / input_side` (integer division);
//! 2. grayscale each pixel as `(r + g + b) / 3` (integer division) and scale to
//!    `[0, 1]` by dividing by 255;
//! 3. `feature = F x + c`, `logits = W feature + b`, `scores = softmax(logits)`.
//!
//! Dot products accumulate in `f64`; features are rounded to `f32`, the same
//! precision the weight and template files use.
//!
//! Weight file layout (`GMF1`), all little-endian:
//!
//! | offset | content                                   |
//! |--------|-------------------------------------------|
//! | 0      | magic `b"GMF1"`                           |
//! | 4      | `u32` input_side                          |
//! | 8      | `u32` feature_dimension                   |
//! | 12     | `u32` class count, always 7               |
//! | 16     | `u32` flags, always 0                     |
//! | 20     | `f32` F, feature_dimension x input_side^2 |
//! | ...    | `f32` c, feature_dimension                |
//! | ...    | `f32` W, 7 x feature_dimension            |
//! | ...    | `f32` b, 7                                |

use std::fs;
use std::path::{Path, PathBuf};

use crate::emotion::{EmotionScores, NUM_EMOTIONS};
use crate::error::{Error, Result};
use crate::face::{FaceImage, MIN_IMAGE_SIDE};

pub const WEIGHT_MAGIC: &[u8; 4] = b"GMF1";
const HEADER_LEN: usize = 20;

/// Embedding produced by a backend; all components finite.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f32>);

impl FeatureVector {
    pub fn new(components: Vec<f32>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Backend("feature vector must be non-empty".into()));
        }
        if let Some(i) = components.iter().position(|v| !v.is_finite()) {
            return Err(Error::Backend(format!("feature component {i} is not finite")));
        }
        Ok(Self(components))
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn components(&self) -> &[f32] {
        &self.0
    }

    /// Squared Euclidean distance, accumulated in `f64`.
    pub fn squared_distance(&self, other: &FeatureVector) -> f64 {
        debug_assert_eq!(self.dimension(), other.dimension());
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| {
                let d = *a as f64 - *b as f64;
                d * d
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum WeightsSource {
    Path(PathBuf),
    Inline(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendDescriptor {
    pub name: String,
    pub input_side: u32,
    pub feature_dimension: u32,
    pub weights_source: WeightsSource,
}

impl BackendDescriptor {
    /// Builds a descriptor from a weight file, taking the shape from its header
    /// and the name from the file stem.
    pub fn from_path(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        let weights = ReferenceWeights::decode(&bytes)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "reference".into());
        Ok(Self {
            name,
            input_side: weights.input_side,
            feature_dimension: weights.feature_dimension,
            weights_source: WeightsSource::Path(path.to_path_buf()),
        })
    }

    pub fn inline(name: impl Into<String>, weights: &ReferenceWeights) -> Self {
        Self {
            name: name.into(),
            input_side: weights.input_side,
            feature_dimension: weights.feature_dimension,
            weights_source: WeightsSource::Inline(weights.encode()),
        }
    }
}

/// Parameters of the reference affine backend.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceWeights {
    pub input_side: u32,
    pub feature_dimension: u32,
    /// `feature_dimension x input_side^2`, row-major.
    pub feature_map: Vec<f32>,
    pub feature_bias: Vec<f32>,
    /// `7 x feature_dimension`, row-major.
    pub logit_map: Vec<f32>,
    pub logit_bias: [f32; NUM_EMOTIONS],
}

impl ReferenceWeights {
    pub fn zeros(input_side: u32, feature_dimension: u32) -> Self {
        let inputs = (input_side * input_side) as usize;
        let dim = feature_dimension as usize;
        Self {
            input_side,
            feature_dimension,
            feature_map: vec![0.0; dim * inputs],
            feature_bias: vec![0.0; dim],
            logit_map: vec![0.0; NUM_EMOTIONS * dim],
            logit_bias: [0.0; NUM_EMOTIONS],
        }
    }

    /// Deterministic pseudo-random weights in `[-scale, scale)`.
    pub fn seeded(input_side: u32, feature_dimension: u32, seed: u64, scale: f32) -> Self {
        let mut rng = crate::rng::SplitMix64::new(seed);
        let mut draw = || (rng.next_f64() as f32 * 2.0 - 1.0) * scale;
        let mut w = Self::zeros(input_side, feature_dimension);
        w.feature_map.iter_mut().for_each(|v| *v = draw());
        w.feature_bias.iter_mut().for_each(|v| *v = draw());
        w.logit_map.iter_mut().for_each(|v| *v = draw());
        w.logit_bias.iter_mut().for_each(|v| *v = draw());
        w
    }

    pub fn input_len(&self) -> usize {
        (self.input_side * self.input_side) as usize
    }

    fn check_shape(&self) -> Result<()> {
        let dim = self.feature_dimension as usize;
        if self.input_side < MIN_IMAGE_SIDE
            || dim == 0
            || self.feature_map.len() != dim * self.input_len()
            || self.feature_bias.len() != dim
            || self.logit_map.len() != NUM_EMOTIONS * dim
        {
            return Err(Error::Backend("weight arrays do not match declared shape".into()));
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let floats = self.feature_map.len()
            + self.feature_bias.len()
            + self.logit_map.len()
            + NUM_EMOTIONS;
        let mut out = Vec::with_capacity(HEADER_LEN + floats * 4);
        out.extend_from_slice(WEIGHT_MAGIC);
        out.extend_from_slice(&self.input_side.to_le_bytes());
        out.extend_from_slice(&self.feature_dimension.to_le_bytes());
        out.extend_from_slice(&(NUM_EMOTIONS as u32).to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        for v in self
            .feature_map
            .iter()
            .chain(&self.feature_bias)
            .chain(&self.logit_map)
            .chain(&self.logit_bias)
        {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let fail = |offset: usize, reason: String| Error::BackendLoad { offset, reason };
        let mut reader = LeReader { bytes, pos: 0 };

        let magic = reader.take(4).ok_or_else(|| fail(bytes.len(), "truncated magic".into()))?;
        if magic != WEIGHT_MAGIC {
            let first_bad = magic.iter().zip(WEIGHT_MAGIC).position(|(a, b)| a != b).unwrap_or(0);
            return Err(fail(first_bad, format!("bad magic {magic:?}")));
        }
        let input_side = reader.u32().ok_or_else(|| fail(bytes.len(), "truncated header".into()))?;
        if input_side < MIN_IMAGE_SIDE {
            return Err(fail(4, format!("input_side {input_side} < {MIN_IMAGE_SIDE}")));
        }
        let feature_dimension = reader.u32().ok_or_else(|| fail(bytes.len(), "truncated header".into()))?;
        if feature_dimension == 0 {
            return Err(fail(8, "feature_dimension is zero".into()));
        }
        let classes = reader.u32().ok_or_else(|| fail(bytes.len(), "truncated header".into()))?;
        if classes as usize != NUM_EMOTIONS {
            return Err(fail(12, format!("class count {classes}, expected {NUM_EMOTIONS}")));
        }
        let flags = reader.u32().ok_or_else(|| fail(bytes.len(), "truncated header".into()))?;
        if flags != 0 {
            return Err(fail(16, format!("unsupported flags {flags:#x}")));
        }

        let dim = feature_dimension as usize;
        let inputs = (input_side as usize)
            .checked_mul(input_side as usize)
            .ok_or_else(|| fail(4, "input_side overflows".into()))?;
        let floats = dim
            .checked_mul(inputs)
            .and_then(|n| n.checked_add(dim))
            .and_then(|n| n.checked_add(NUM_EMOTIONS * dim))
            .and_then(|n| n.checked_add(NUM_EMOTIONS))
            .ok_or_else(|| fail(8, "declared shape overflows".into()))?;
        let expected_len = floats
            .checked_mul(4)
            .and_then(|n| n.checked_add(HEADER_LEN))
            .ok_or_else(|| fail(8, "declared shape overflows".into()))?;
        if bytes.len() < expected_len {
            return Err(fail(
                bytes.len(),
                format!("truncated: expected {expected_len} bytes, got {}", bytes.len()),
            ));
        }
        if bytes.len() > expected_len {
            return Err(fail(
                expected_len,
                format!("{} trailing bytes", bytes.len() - expected_len),
            ));
        }

        let mut read_floats = |n: usize| -> Result<Vec<f32>> {
            let mut values = Vec::with_capacity(n);
            for _ in 0..n {
                let at = reader.pos;
                let v = reader.f32().ok_or_else(|| fail(at, "truncated".into()))?;
                if !v.is_finite() {
                    return Err(fail(at, format!("non-finite weight {v}")));
                }
                values.push(v);
            }
            Ok(values)
        };
        let feature_map = read_floats(dim * inputs)?;
        let feature_bias = read_floats(dim)?;
        let logit_map = read_floats(NUM_EMOTIONS * dim)?;
        let logit_bias: [f32; NUM_EMOTIONS] = read_floats(NUM_EMOTIONS)?
            .try_into()
            .expect("seven logit biases");

        Ok(Self {
            input_side,
            feature_dimension,
            feature_map,
            feature_bias,
            logit_map,
            logit_bias,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }
}

struct LeReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> LeReader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let slice = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(slice)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn f32(&mut self) -> Option<f32> {
        self.take(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()))
    }
}

/// A loaded classifier. Implementations must be deterministic and immutable.
pub trait EmotionClassifier: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    /// Probability vector for a face image.
    fn classify(&self, image: &FaceImage) -> Result<EmotionScores>;

    /// Template feature for a face image.
    fn embed(&self, image: &FaceImage) -> Result<FeatureVector>;

    fn feature_dimension(&self) -> usize {
        self.descriptor().feature_dimension as usize
    }
}

#[derive(Debug, Clone)]
pub struct ReferenceBackend {
    descriptor: BackendDescriptor,
    weights: ReferenceWeights,
}

/// Loads the reference backend. The weight header must agree with the
/// descriptor's shape.
pub fn load_backend(descriptor: BackendDescriptor) -> Result<ReferenceBackend> {
    let bytes = match &descriptor.weights_source {
        WeightsSource::Path(p) => fs::read(p).map_err(|e| Error::BackendLoad {
            offset: 0,
            reason: format!("cannot read {}: {e}", p.display()),
        })?,
        WeightsSource::Inline(b) => b.clone(),
    };
    let weights = ReferenceWeights::decode(&bytes)?;
    if weights.input_side != descriptor.input_side {
        return Err(Error::BackendLoad {
            offset: 4,
            reason: format!(
                "input_side {} does not match descriptor {}",
                weights.input_side, descriptor.input_side
            ),
        });
    }
    if weights.feature_dimension != descriptor.feature_dimension {
        return Err(Error::BackendLoad {
            offset: 8,
            reason: format!(
                "feature_dimension {} does not match descriptor {}",
                weights.feature_dimension, descriptor.feature_dimension
            ),
        });
    }
    Ok(ReferenceBackend {
        descriptor,
        weights,
    })
}

impl ReferenceBackend {
    pub fn from_weights(name: impl Into<String>, weights: ReferenceWeights) -> Result<Self> {
        weights.check_shape()?;
        let descriptor = BackendDescriptor::inline(name, &weights);
        Ok(Self {
            descriptor,
            weights,
        })
    }

    pub fn load_path(path: &Path) -> Result<Self> {
        load_backend(BackendDescriptor::from_path(path)?)
    }

    pub fn weights(&self) -> &ReferenceWeights {
        &self.weights
    }

    /// Nearest-neighbour resize plus integer grayscale, scaled to `[0, 1]`.
    pub fn preprocess(&self, image: &FaceImage) -> Vec<f64> {
        let side = self.weights.input_side;
        let (w, h) = (image.width() as u64, image.height() as u64);
        let mut x = Vec::with_capacity(self.weights.input_len());
        for dy in 0..side as u64 {
            let sy = (dy * h / side as u64) as u32;
            for dx in 0..side as u64 {
                let sx = (dx * w / side as u64) as u32;
                x.push(image.gray(sx, sy) as f64 / 255.0);
            }
        }
        x
    }

    /// `W feature + b` in `f64`.
    pub fn logits(&self, feature: &FeatureVector) -> [f64; NUM_EMOTIONS] {
        let dim = self.weights.feature_dimension as usize;
        let f = feature.components();
        let mut out = [0.0; NUM_EMOTIONS];
        for (k, o) in out.iter_mut().enumerate() {
            let row = &self.weights.logit_map[k * dim..(k + 1) * dim];
            *o = self.weights.logit_bias[k] as f64 + dot(row, f);
        }
        out
    }
}

fn dot(row: &[f32], x: &[f32]) -> f64 {
    row.iter().zip(x).map(|(a, b)| *a as f64 * *b as f64).sum()
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64; NUM_EMOTIONS]) -> [f64; NUM_EMOTIONS] {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; NUM_EMOTIONS];
    for (o, l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
    }
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|o| *o /= sum);
    out
}

impl EmotionClassifier for ReferenceBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn classify(&self, image: &FaceImage) -> Result<EmotionScores> {
        let feature = self.embed(image)?;
        EmotionScores::new(softmax(&self.logits(&feature)))
    }

    fn embed(&self, image: &FaceImage) -> Result<FeatureVector> {
        let x = self.preprocess(image);
        let inputs = x.len();
        let components = self
            .weights
            .feature_bias
            .iter()
            .enumerate()
            .map(|(i, bias)| {
                let row = &self.weights.feature_map[i * inputs..(i + 1) * inputs];
                let acc: f64 = row.iter().zip(&x).map(|(w, v)| *w as f64 * v).sum();
                (*bias as f64 + acc) as f32
            })
            .collect();
        FeatureVector::new(components)
    }
}
