use std::io::Cursor;

use image::{ImageFormat, ImageReader};
use serde::{Deserialize, Serialize};

use crate::digest::sha256_hex;

pub const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', b'\r', b'\n', 0x1a, b'\n'];

/// Default upper bound on sketch area, in pixels.
pub const DEFAULT_MAX_PIXELS: u64 = 4096 * 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SketchFormat {
    Png,
}

/// A completed audience sketch as delivered by the drawing app.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SketchImage {
    pub width_px: u32,
    pub height_px: u32,
    pub format: SketchFormat,
    #[serde(with = "crate::serde_b64")]
    pub bytes: Vec<u8>,
    pub checksum: String,
}

impl SketchImage {
    /// Wraps PNG bytes, reading dimensions from the header and computing
    /// the checksum. Undecodable headers yield a 0×0 image, which
    /// [`validate_sketch`] rejects.
    pub fn from_png(bytes: Vec<u8>) -> Self {
        let (width_px, height_px) = png_dimensions(&bytes).unwrap_or((0, 0));
        let checksum = sha256_hex(&bytes);
        Self {
            width_px,
            height_px,
            format: SketchFormat::Png,
            bytes,
            checksum,
        }
    }

    pub fn pixel_count(&self) -> u64 {
        self.width_px as u64 * self.height_px as u64
    }

    pub fn decode_rgba(&self) -> Option<image::RgbaImage> {
        image::load_from_memory_with_format(&self.bytes, ImageFormat::Png)
            .ok()
            .map(|img| img.to_rgba8())
    }
}

fn png_dimensions(bytes: &[u8]) -> Option<(u32, u32)> {
    if !bytes.starts_with(&PNG_SIGNATURE) {
        return None;
    }
    ImageReader::with_format(Cursor::new(bytes), ImageFormat::Png)
        .into_dimensions()
        .ok()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    EmptyImage,
    ChecksumMismatch,
    UnsupportedFormat,
    DimensionMismatch,
    TooLarge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValidationResult {
    Accept,
    Reject(RejectReason),
}

impl ValidationResult {
    pub fn is_accept(self) -> bool {
        matches!(self, ValidationResult::Accept)
    }
}

/// Checks a sketch before any job is created for it.
///
/// Rejection is a value: the caller decides how to surface it.
pub fn validate_sketch(image: &SketchImage, max_pixels: u64) -> ValidationResult {
    use RejectReason::*;
    if image.width_px == 0 || image.height_px == 0 || image.bytes.is_empty() {
        return ValidationResult::Reject(EmptyImage);
    }
    if sha256_hex(&image.bytes) != image.checksum {
        return ValidationResult::Reject(ChecksumMismatch);
    }
    let Some((w, h)) = png_dimensions(&image.bytes) else {
        return ValidationResult::Reject(UnsupportedFormat);
    };
    if (w, h) != (image.width_px, image.height_px) {
        return ValidationResult::Reject(DimensionMismatch);
    }
    if image.pixel_count() > max_pixels {
        return ValidationResult::Reject(TooLarge);
    }
    ValidationResult::Accept
}

/// Encodes an RGBA buffer as PNG.
pub fn encode_png(img: &image::RgbaImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .expect("in-memory PNG encoding");
    out.into_inner()
}

/// Deterministic stand-in for an audience drawing: a few strokes on a white
/// canvas, keyed by `seed`.
pub fn synthetic_sketch(seed: u64, width: u32, height: u32) -> Vec<u8> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut img = image::RgbaImage::from_pixel(width, height, image::Rgba([255, 255, 255, 255]));
    let strokes = rng.random_range(2..6);
    for _ in 0..strokes {
        let color = image::Rgba([rng.random(), rng.random(), rng.random(), 255]);
        let (mut x, mut y) = (
            rng.random_range(0..width) as f64,
            rng.random_range(0..height) as f64,
        );
        let (dx, dy): (f64, f64) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        for _ in 0..rng.random_range(20..120) {
            if x >= 0.0 && y >= 0.0 && (x as u32) < width && (y as u32) < height {
                img.put_pixel(x as u32, y as u32, color);
            }
            x += dx;
            y += dy;
        }
    }
    encode_png(&img)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn png(w: u32, h: u32) -> Vec<u8> {
        encode_png(&image::RgbaImage::new(w, h))
    }

    #[test]
    fn canonical_intermediate_size_is_accepted() {
        let sketch = SketchImage::from_png(png(512, 384));
        assert_eq!((sketch.width_px, sketch.height_px), (512, 384));
        assert_eq!(
            validate_sketch(&sketch, DEFAULT_MAX_PIXELS),
            ValidationResult::Accept
        );
    }

    #[test]
    fn checksum_mismatch_is_rejected() {
        let mut sketch = SketchImage::from_png(png(16, 16));
        sketch.checksum = sha256_hex(b"something else");
        assert_eq!(
            validate_sketch(&sketch, DEFAULT_MAX_PIXELS),
            ValidationResult::Reject(RejectReason::ChecksumMismatch)
        );
    }

    #[test]
    fn zero_by_zero_is_empty() {
        let sketch = SketchImage {
            width_px: 0,
            height_px: 0,
            format: SketchFormat::Png,
            bytes: vec![1, 2, 3],
            checksum: sha256_hex(&[1, 2, 3]),
        };
        assert_eq!(
            validate_sketch(&sketch, DEFAULT_MAX_PIXELS),
            ValidationResult::Reject(RejectReason::EmptyImage)
        );
    }

    #[test]
    fn non_png_bytes_are_rejected() {
        let bytes = b"GIF89a not a png at all".to_vec();
        let sketch = SketchImage {
            width_px: 10,
            height_px: 10,
            format: SketchFormat::Png,
            checksum: sha256_hex(&bytes),
            bytes,
        };
        assert_eq!(
            validate_sketch(&sketch, DEFAULT_MAX_PIXELS),
            ValidationResult::Reject(RejectReason::UnsupportedFormat)
        );
    }

    #[test]
    fn declared_dimensions_must_match_header() {
        let mut sketch = SketchImage::from_png(png(20, 10));
        sketch.width_px = 10;
        assert_eq!(
            validate_sketch(&sketch, DEFAULT_MAX_PIXELS),
            ValidationResult::Reject(RejectReason::DimensionMismatch)
        );
    }

    #[test]
    fn area_limit_is_configurable() {
        let sketch = SketchImage::from_png(png(64, 64));
        assert_eq!(
            validate_sketch(&sketch, 64 * 63),
            ValidationResult::Reject(RejectReason::TooLarge)
        );
        assert!(validate_sketch(&sketch, 64 * 64).is_accept());
    }

    #[test]
    fn synthetic_sketches_are_deterministic() {
        assert_eq!(synthetic_sketch(7, 64, 48), synthetic_sketch(7, 64, 48));
        assert_ne!(synthetic_sketch(7, 64, 48), synthetic_sketch(8, 64, 48));
    }
}
