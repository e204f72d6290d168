//! RGB face frames, face regions and the detector interface.

use std::io::Cursor;

use image::{ImageFormat, RgbImage};

use crate::error::{Error, Result};

pub const MIN_IMAGE_SIDE: u32 = 16;

/// Grayscale variance (in squared 0..=255 intensity units) below which the
/// reference detector treats a frame as blank.
pub const BLANK_VARIANCE_FLOOR: f64 = 4.0;

/// 8-bit RGB, row-major, no padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaceImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl FaceImage {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if width < MIN_IMAGE_SIDE || height < MIN_IMAGE_SIDE {
            return Err(Error::InvalidImage(format!(
                "{width}x{height} is smaller than {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}"
            )));
        }
        let expected = width as usize * height as usize * 3;
        if data.len() != expected {
            return Err(Error::InvalidImage(format!(
                "{width}x{height} needs {expected} bytes, got {}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self> {
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 3)
            .collect();
        Self::new(width, height, data)
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [u8; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    /// Decodes PNG or JPEG bytes.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let format = image::guess_format(bytes)
            .map_err(|e| Error::InvalidImage(format!("unrecognized image data: {e}")))?;
        if !matches!(format, ImageFormat::Png | ImageFormat::Jpeg) {
            return Err(Error::InvalidImage(format!(
                "unsupported image format {format:?}"
            )));
        }
        let decoded = image::load_from_memory_with_format(bytes, format)
            .map_err(|e| Error::InvalidImage(e.to_string()))?
            .into_rgb8();
        let (width, height) = decoded.dimensions();
        Self::new(width, height, decoded.into_raw())
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let img = RgbImage::from_raw(self.width, self.height, self.data.clone())
            .ok_or_else(|| Error::InvalidImage("buffer size mismatch".into()))?;
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        Ok(out.into_inner())
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Integer-mean grayscale, `(r + g + b) / 3`.
    pub fn gray(&self, x: u32, y: u32) -> u8 {
        let [r, g, b] = self.pixel(x, y);
        ((r as u16 + g as u16 + b as u16) / 3) as u8
    }

    pub fn full_region(&self) -> FaceRegion {
        FaceRegion {
            x: 0,
            y: 0,
            width: self.width,
            height: self.height,
        }
    }

    pub fn crop(&self, region: &FaceRegion) -> Result<FaceImage> {
        region.check_within(self)?;
        let mut data = Vec::with_capacity(region.width as usize * region.height as usize * 3);
        let row_bytes = self.width as usize * 3;
        for y in region.y..region.y + region.height {
            let start = y as usize * row_bytes + region.x as usize * 3;
            data.extend_from_slice(&self.data[start..start + region.width as usize * 3]);
        }
        FaceImage::new(region.width, region.height, data)
    }

    fn gray_variance(&self) -> f64 {
        let n = (self.width as u64 * self.height as u64) as f64;
        let mut sum = 0u64;
        let mut sum_sq = 0u64;
        for px in self.data.chunks_exact(3) {
            let g = (px[0] as u64 + px[1] as u64 + px[2] as u64) / 3;
            sum += g;
            sum_sq += g * g;
        }
        let mean = sum as f64 / n;
        (sum_sq as f64 / n - mean * mean).max(0.0)
    }
}

/// Axis-aligned box inside an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FaceRegion {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl FaceRegion {
    pub fn check_within(&self, image: &FaceImage) -> Result<()> {
        let fits = self.width > 0
            && self.height > 0
            && self.x as u64 + self.width as u64 <= image.width as u64
            && self.y as u64 + self.height as u64 <= image.height as u64;
        if fits {
            Ok(())
        } else {
            Err(Error::InvalidImage(format!(
                "region {self:?} outside {}x{} image",
                image.width, image.height
            )))
        }
    }
}

pub trait FaceDetector: Send + Sync {
    /// The face box, or `None` when no face is found.
    fn detect(&self, image: &FaceImage) -> Option<FaceRegion>;
}

/// Largest centered square, unless the frame is blank.
#[derive(Debug, Clone, Copy)]
pub struct CenterCropDetector {
    pub variance_floor: f64,
}

impl Default for CenterCropDetector {
    fn default() -> Self {
        Self {
            variance_floor: BLANK_VARIANCE_FLOOR,
        }
    }
}

impl FaceDetector for CenterCropDetector {
    fn detect(&self, image: &FaceImage) -> Option<FaceRegion> {
        if image.gray_variance() < self.variance_floor {
            return None;
        }
        let side = image.width.min(image.height);
        Some(FaceRegion {
            x: (image.width - side) / 2,
            y: (image.height - side) / 2,
            width: side,
            height: side,
        })
    }
}

/// Detect, then crop to the detected box.
pub fn detect_and_crop(detector: &dyn FaceDetector, image: &FaceImage) -> Option<FaceImage> {
    let region = detector.detect(image)?;
    image.crop(&region).ok()
}
